//! Model data shared by every other module: the atomic spectral measures of
//! the two covariance factors, the dimensions, and the kernel integrals.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Below this distance from a kernel pole the integrand is numerically
/// meaningless.
pub const POLE_THRESHOLD: f64 = 1e-14;

/// Tolerance for the normalized-weight invariant.
pub const WEIGHT_TOLERANCE: f64 = 1e-12;

/// One atom of a spectral measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub weight: f64,
}

/// A finite atomic probability measure on the nonnegative reals.
///
/// Atoms are sorted by descending value, duplicate values are merged, and
/// weights sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

impl AtomicMeasure {
    /// Builds a measure from raw `(value, weight)` pairs: validates, merges
    /// exactly equal values, sorts descending and normalizes the weights.
    pub fn new(raw: &[(f64, f64)]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        for &(value, weight) in raw {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidAtom {
                    value,
                    weight,
                    reason: "atom value must be finite and nonnegative",
                });
            }
            if !weight.is_finite() || weight <= 0.0 {
                return Err(Error::InvalidAtom {
                    value,
                    weight,
                    reason: "atom weight must be finite and positive",
                });
            }
        }
        let mut atoms: Vec<Atom> = raw
            .iter()
            .map(|&(value, weight)| Atom { value, weight })
            .collect();
        // Descending by value; merge bitwise-equal values (the canonical
        // decimal parse already happened upstream).
        atoms.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap());
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for atom in atoms {
            match merged.last_mut() {
                Some(last) if last.value == atom.value => last.weight += atom.weight,
                _ => merged.push(atom),
            }
        }
        let total = kahan_sum(merged.iter().map(|a| a.weight));
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroTotalWeight(total));
        }
        // Dividing only when needed keeps reconstruction from an emitted
        // document byte-identical.
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            for atom in &mut merged {
                atom.weight /= total;
            }
        }
        debug_assert!(
            (kahan_sum(merged.iter().map(|a| a.weight)) - 1.0).abs() <= WEIGHT_TOLERANCE
        );
        Ok(Self { atoms: merged })
    }

    /// A single unit atom at `value`.
    pub fn dirac(value: f64) -> Self {
        Self::new(&[(value, 1.0)]).expect("dirac atom is valid")
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// Largest atom value.
    pub fn max_value(&self) -> f64 {
        self.atoms[0].value
    }

    /// Smallest strictly positive atom value, if any.
    pub fn min_positive_value(&self) -> Option<f64> {
        self.atoms
            .iter()
            .rev()
            .find(|a| a.value > 0.0)
            .map(|a| a.value)
    }

    /// Mass of the interval `[0, x]`.
    pub fn mass_up_to(&self, x: f64) -> f64 {
        kahan_sum(
            self.atoms
                .iter()
                .filter(|a| a.value <= x)
                .map(|a| a.weight),
        )
    }

    pub fn mean(&self) -> f64 {
        kahan_sum(self.atoms.iter().map(|a| a.value * a.weight))
    }

    /// The kernel integral `sum_t w_t * t / (1 + t*alpha)`.
    ///
    /// Errors when some denominator `1 + t*alpha` is closer than
    /// [`POLE_THRESHOLD`] to zero.
    pub fn kernel_integral(&self, alpha: Complex64) -> Result<Complex64> {
        let mut sum = Complex64::new(0.0, 0.0);
        for atom in &self.atoms {
            let denom = Complex64::new(1.0, 0.0) + atom.value * alpha;
            if denom.norm() < POLE_THRESHOLD {
                return Err(Error::SingularKernel {
                    atom: atom.value,
                    dist: denom.norm(),
                });
            }
            sum += atom.weight * atom.value / denom;
        }
        Ok(sum)
    }

    /// Real-argument kernel integral, same pole guard.
    pub fn kernel_integral_real(&self, alpha: f64) -> Result<f64> {
        let mut sum = 0.0;
        for atom in &self.atoms {
            let denom = 1.0 + atom.value * alpha;
            if denom.abs() < POLE_THRESHOLD {
                return Err(Error::SingularKernel {
                    atom: atom.value,
                    dist: denom.abs(),
                });
            }
            sum += atom.weight * atom.value / denom;
        }
        Ok(sum)
    }

    /// `sum_t w_t / (1 + t*alpha)`, the weight-only companion integral.
    pub fn unit_integral(&self, alpha: Complex64) -> Result<Complex64> {
        let mut sum = Complex64::new(0.0, 0.0);
        for atom in &self.atoms {
            let denom = Complex64::new(1.0, 0.0) + atom.value * alpha;
            if denom.norm() < POLE_THRESHOLD {
                return Err(Error::SingularKernel {
                    atom: atom.value,
                    dist: denom.norm(),
                });
            }
            sum += atom.weight / denom;
        }
        Ok(sum)
    }

    /// Expands the measure to `dim` sorted coordinate values (descending),
    /// assigning multiplicities by largest remainder so the counts sum to
    /// `dim` exactly.
    pub fn expand(&self, dim: usize) -> Vec<f64> {
        let mut counts: Vec<usize> = Vec::with_capacity(self.atoms.len());
        let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(self.atoms.len());
        let mut assigned = 0usize;
        for (idx, atom) in self.atoms.iter().enumerate() {
            let exact = atom.weight * dim as f64;
            let floor = exact.floor() as usize;
            counts.push(floor);
            assigned += floor;
            remainders.push((exact - floor as f64, idx));
        }
        remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut missing = dim.saturating_sub(assigned);
        for &(_, idx) in &remainders {
            if missing == 0 {
                break;
            }
            counts[idx] += 1;
            missing -= 1;
        }
        let mut out = Vec::with_capacity(dim);
        for (atom, count) in self.atoms.iter().zip(&counts) {
            out.extend(std::iter::repeat(atom.value).take(*count));
        }
        debug_assert_eq!(out.len(), dim);
        out
    }
}

/// A spectral point `z = E + i*eta` in the open upper half plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexPoint {
    e: f64,
    eta: f64,
}

impl ComplexPoint {
    pub fn new(e: f64, eta: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() || !e.is_finite() {
            return Err(Error::NonPositiveEta(eta));
        }
        Ok(Self { e, eta })
    }

    pub fn e(&self) -> f64 {
        self.e
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.e, self.eta)
    }

    /// Distance `kappa = |E - lambda_+|` to the given edge.
    pub fn kappa(&self, lambda_plus: f64) -> f64 {
        (self.e - lambda_plus).abs()
    }
}

/// The model: spectral measures of the two covariance factors plus the
/// dimensions. Roles are swapped at construction when `n > N` so that the
/// aspect ratio `d = n/N` always lies in `(0, 1]`.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralModel {
    pi_a: AtomicMeasure,
    pi_b: AtomicMeasure,
    n: usize,
    big_n: usize,
    d: f64,
    swapped: bool,
}

impl SpectralModel {
    pub fn new(
        atoms_a: &[(f64, f64)],
        atoms_b: &[(f64, f64)],
        n: usize,
        big_n: usize,
    ) -> Result<Self> {
        if n == 0 || big_n == 0 {
            return Err(Error::InvalidDimensions { n, big_n });
        }
        let pi_a = AtomicMeasure::new(atoms_a)?;
        let pi_b = AtomicMeasure::new(atoms_b)?;
        let (pi_a, pi_b, n, big_n, swapped) = if n > big_n {
            (pi_b, pi_a, big_n, n, true)
        } else {
            (pi_a, pi_b, n, big_n, false)
        };
        let d = n as f64 / big_n as f64;
        Ok(Self {
            pi_a,
            pi_b,
            n,
            big_n,
            d,
            swapped,
        })
    }

    /// Null model with identity covariances on both sides.
    pub fn null_mp(n: usize, big_n: usize) -> Result<Self> {
        Self::new(&[(1.0, 1.0)], &[(1.0, 1.0)], n, big_n)
    }

    pub fn pi_a(&self) -> &AtomicMeasure {
        &self.pi_a
    }

    pub fn pi_b(&self) -> &AtomicMeasure {
        &self.pi_b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn big_n(&self) -> usize {
        self.big_n
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn swapped(&self) -> bool {
        self.swapped
    }

    /// Largest atom of the A-side measure.
    pub fn sigma1(&self) -> f64 {
        self.pi_a.max_value()
    }

    /// Largest atom of the B-side measure.
    pub fn tilde_sigma1(&self) -> f64 {
        self.pi_b.max_value()
    }

    /// Coordinate expansion of the A-side spectrum to `n` entries.
    pub fn expanded_sigma_a(&self) -> Vec<f64> {
        self.pi_a.expand(self.n)
    }

    /// Coordinate expansion of the B-side spectrum to `N` entries.
    pub fn expanded_sigma_b(&self) -> Vec<f64> {
        self.pi_b.expand(self.big_n)
    }

    /// Structural checks against the small constant `tau`: bounded operator
    /// norms, no mass concentration at zero, and the aspect-ratio window.
    pub fn validate_structure(&self, tau: f64) -> ValidationReport {
        let max_atom = self.sigma1().max(self.tilde_sigma1());
        let norm_margin = 1.0 / tau - max_atom;
        let mass_a = self.pi_a.mass_up_to(tau);
        let mass_b = self.pi_b.mass_up_to(tau);
        let zero_mass_margin = (1.0 - tau) - mass_a.max(mass_b);
        let ratio_margin = (self.d - tau).min(1.0 - self.d);
        let norm_ok = norm_margin >= 0.0;
        let zero_mass_ok = zero_mass_margin >= 0.0;
        let ratio_ok = ratio_margin >= 0.0;
        ValidationReport {
            tau,
            norm_ok,
            norm_margin,
            zero_mass_ok,
            zero_mass_margin,
            ratio_ok,
            ratio_margin,
            pass: norm_ok && zero_mass_ok && ratio_ok,
        }
    }

    /// SHA-256 over the canonical document form; identifies the model in
    /// emitted reports.
    pub fn hash(&self) -> String {
        let doc = self.to_document();
        let bytes = serde_json::to_vec(&doc).expect("model document serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            n: self.n as u64,
            big_n: self.big_n as u64,
            atoms_a: self
                .pi_a
                .atoms()
                .iter()
                .map(|a| [NumberOrString::Number(a.value), NumberOrString::Number(a.weight)])
                .collect(),
            atoms_b: self
                .pi_b
                .atoms()
                .iter()
                .map(|a| [NumberOrString::Number(a.value), NumberOrString::Number(a.weight)])
                .collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let parse = |pairs: &[[NumberOrString; 2]]| -> Result<Vec<(f64, f64)>> {
            pairs
                .iter()
                .map(|[v, w]| Ok((v.parse()?, w.parse()?)))
                .collect()
        };
        Self::new(
            &parse(&doc.atoms_a)?,
            &parse(&doc.atoms_b)?,
            doc.n as usize,
            doc.big_n as usize,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
        Self::from_document(&doc)
    }
}

/// On-disk model schema. Atom values and weights accept either JSON numbers
/// or exact decimal strings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n: u64,
    #[serde(rename = "N")]
    pub big_n: u64,
    pub atoms_a: Vec<[NumberOrString; 2]>,
    pub atoms_b: Vec<[NumberOrString; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberOrString {
    Number(f64),
    String(String),
}

impl NumberOrString {
    pub fn parse(&self) -> Result<f64> {
        match self {
            NumberOrString::Number(x) => Ok(*x),
            NumberOrString::String(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidModel(format!("bad decimal {s:?}: {e}"))),
        }
    }
}

/// Outcome of [`SpectralModel::validate_structure`]; always returned, never
/// an error.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub tau: f64,
    pub norm_ok: bool,
    pub norm_margin: f64,
    pub zero_mass_ok: bool,
    pub zero_mass_margin: f64,
    pub ratio_ok: bool,
    pub ratio_margin: f64,
    pub pass: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn builds_fig1_style_model() {
        let m = SpectralModel::new(
            &[(1.0, 0.5), (4.0, 0.5)],
            &[(1.0, 0.5), (4.0, 0.5)],
            1000,
            2000,
        )
        .unwrap();
        assert_eq!(m.d(), 0.5);
        assert!(!m.swapped());
        assert_eq!(m.sigma1(), 4.0);
    }

    #[test]
    fn null_model_has_unit_ratio() {
        let m = SpectralModel::null_mp(300, 300).unwrap();
        assert_eq!(m.d(), 1.0);
    }

    #[test]
    fn duplicate_atoms_merge() {
        let measure = AtomicMeasure::new(&[(2.0, 0.3), (2.0, 0.7)]).unwrap();
        assert_eq!(measure.atoms().len(), 1);
        assert_eq!(measure.atoms()[0].value, 2.0);
        assert_relative_eq!(measure.atoms()[0].weight, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn swaps_roles_when_n_exceeds_big_n() {
        let m = SpectralModel::new(&[(2.0, 1.0)], &[(3.0, 1.0)], 400, 100).unwrap();
        assert!(m.swapped());
        assert_eq!(m.n(), 100);
        assert_eq!(m.big_n(), 400);
        assert_eq!(m.sigma1(), 3.0);
        assert_eq!(m.tilde_sigma1(), 2.0);
        assert!(m.d() <= 1.0);
    }

    #[test]
    fn rejects_bad_atoms() {
        assert!(matches!(
            AtomicMeasure::new(&[]),
            Err(Error::EmptyMeasure)
        ));
        assert!(AtomicMeasure::new(&[(-1.0, 0.5)]).is_err());
        assert!(AtomicMeasure::new(&[(1.0, 0.0)]).is_err());
        assert!(AtomicMeasure::new(&[(1.0, -0.2)]).is_err());
        assert!(SpectralModel::new(&[(1.0, 1.0)], &[(1.0, 1.0)], 0, 5).is_err());
    }

    #[test]
    fn kernel_integral_trivial_values() {
        let delta1 = AtomicMeasure::dirac(1.0);
        let v = delta1.kernel_integral(Complex64::new(0.0, 0.0)).unwrap();
        assert_relative_eq!(v.re, 1.0, epsilon = 1e-15);
        let v = delta1.kernel_integral(Complex64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(v.re, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn kernel_integral_two_atom_arithmetic() {
        // 0.5 * 1/(1-0.1) + 0.5 * 4/(1-0.4), evaluated longhand.
        let m = AtomicMeasure::new(&[(1.0, 0.5), (4.0, 0.5)]).unwrap();
        let v = m.kernel_integral(Complex64::new(-0.1, 0.0)).unwrap();
        let expected = 0.5 * (1.0 / 0.9) + 0.5 * (4.0 / 0.6);
        assert_relative_eq!(v.re, expected, epsilon = 1e-14);
        assert_relative_eq!(v.re, 3.888888888888889, epsilon = 1e-12);
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn kernel_integral_pole_collision() {
        let m = AtomicMeasure::dirac(2.0);
        let err = m.kernel_integral(Complex64::new(-0.5, 0.0)).unwrap_err();
        assert!(matches!(err, Error::SingularKernel { atom, .. } if atom == 2.0));
    }

    #[test]
    fn validation_passes_fig1_and_fails_zero_mass() {
        let fig1 = SpectralModel::new(
            &[(1.0, 0.5), (4.0, 0.5)],
            &[(1.0, 0.5), (4.0, 0.5)],
            1000,
            2000,
        )
        .unwrap();
        let report = fig1.validate_structure(0.2);
        assert!(report.pass, "{report:?}");

        let degenerate =
            SpectralModel::new(&[(0.0, 0.9), (1.0, 0.1)], &[(1.0, 1.0)], 100, 200).unwrap();
        let report = degenerate.validate_structure(0.2);
        assert!(!report.pass);
        assert!(!report.zero_mass_ok);

        let null = SpectralModel::null_mp(100, 100).unwrap();
        assert!(null.validate_structure(0.5).pass);
    }

    #[test]
    fn document_roundtrip_is_byte_identical() {
        let m = SpectralModel::new(
            &[(1.0, 1.0), (4.0, 1.0), (2.5, 1.0)],
            &[(1.0, 0.25), (4.0, 0.75)],
            500,
            1000,
        )
        .unwrap();
        let text = m.to_json();
        let reparsed = SpectralModel::from_json(&text).unwrap();
        assert_eq!(text, reparsed.to_json());
        assert_eq!(m.hash(), reparsed.hash());
        for (a, b) in m.pi_a().atoms().iter().zip(reparsed.pi_a().atoms()) {
            assert_eq!(a.value.to_bits(), b.value.to_bits());
            assert_eq!(a.weight.to_bits(), b.weight.to_bits());
        }
    }

    #[test]
    fn document_accepts_decimal_strings() {
        let text = r#"{"n": 10, "N": 20,
            "atoms_a": [["1.0", "0.5"], [4, 0.5]],
            "atoms_b": [[1, 1]]}"#;
        let m = SpectralModel::from_json(text).unwrap();
        assert_eq!(m.pi_a().atoms().len(), 2);
        assert_eq!(m.sigma1(), 4.0);
    }

    #[test]
    fn expansion_uses_largest_remainder() {
        let m = AtomicMeasure::new(&[(1.0, 0.5), (4.0, 0.5)]).unwrap();
        let exp = m.expand(7);
        assert_eq!(exp.len(), 7);
        assert_eq!(exp.iter().filter(|&&v| v == 4.0).count(), 4);
        let uneven = AtomicMeasure::new(&[(1.0, 2.0 / 3.0), (2.0, 1.0 / 3.0)]).unwrap();
        let exp = uneven.expand(10);
        assert_eq!(exp.len(), 10);
        assert_eq!(exp.iter().filter(|&&v| v == 1.0).count(), 7);
    }

    #[test]
    fn complex_point_requires_positive_eta() {
        assert!(ComplexPoint::new(1.0, 0.0).is_err());
        assert!(ComplexPoint::new(1.0, -1.0).is_err());
        let p = ComplexPoint::new(2.0, 0.5).unwrap();
        assert_eq!(p.z(), Complex64::new(2.0, 0.5));
        assert_eq!(p.kappa(4.0), 2.0);
    }
}
