//! Empirical probes of the local laws: the deterministic resolvent limit,
//! the control parameter, and measured local-law / rigidity /
//! delocalization errors against their theoretical envelopes.

use crate::dyson::{solve_at, DysonSolution, SolverConfig};
use crate::edge::{ClassicalLocations, EdgeReport};
use crate::ensemble::SampleSpectrum;
use crate::error::{Error, Result};
use crate::model::{ComplexPoint, SpectralModel};
use crate::seeding::derive_rng;
use nalgebra::DVector;
use num_complex::Complex64;
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::Serialize;

/// Diagonal of the deterministic resolvent limit, one entry per atom value:
/// `-1/(1 + m2c sigma)` on the upper block and `-1/(z (1 + m1c sigma~))` on
/// the lower block.
#[derive(Debug, Clone)]
pub struct PiLimit {
    pub upper: Vec<Complex64>,
    pub lower: Vec<Complex64>,
}

pub fn deterministic_limit_pi(model: &SpectralModel, sol: &DysonSolution) -> Result<PiLimit> {
    let z = sol.z.z();
    let one = Complex64::new(1.0, 0.0);
    let mut upper = Vec::with_capacity(model.pi_a().atoms().len());
    for atom in model.pi_a().atoms() {
        let denom = one + sol.m2c * atom.value;
        if denom.norm() < 1e-10 {
            return Err(Error::SingularPi(denom.norm()));
        }
        upper.push(-one / denom);
    }
    let mut lower = Vec::with_capacity(model.pi_b().atoms().len());
    for atom in model.pi_b().atoms() {
        let denom = one + sol.m1c * atom.value;
        if denom.norm() < 1e-10 {
            return Err(Error::SingularPi(denom.norm()));
        }
        lower.push(-one / (z * denom));
    }
    Ok(PiLimit { upper, lower })
}

/// `Psi = sqrt(Im m2c / (N eta)) + 1/(N eta)`, the local-law error scale.
pub fn control_psi(sol: &DysonSolution, big_n: usize) -> f64 {
    let n_eta = big_n as f64 * sol.z.eta();
    (sol.m2c.im.max(0.0) / n_eta).sqrt() + 1.0 / n_eta
}

/// Stieltjes transform of the sampled spectrum, counting the implicit zero
/// eigenvalues of the square matrix.
pub fn empirical_stieltjes(spectrum: &SampleSpectrum, z: ComplexPoint) -> Complex64 {
    let zc = z.z();
    let mut sum = Complex64::new(0.0, 0.0);
    for &lambda in &spectrum.eigenvalues {
        sum += 1.0 / (Complex64::new(lambda, 0.0) - zc);
    }
    let implicit = spectrum.n - spectrum.eigenvalues.len();
    sum += implicit as f64 * (-1.0 / zc);
    sum / spectrum.n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProbeKind {
    Averaged,
    Anisotropic,
    Rigidity,
    Delocalization,
}

/// Envelope constants: the `prec` relation hides `N^eps` factors, exposed
/// here as a multiplicative constant and an exponent slack.
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub constant: f64,
    pub exponent_slack: f64,
    /// Domain window `[lambda_+ - c0_frac * lambda_+, big_c0 * lambda_+]`
    /// for averaged-law grids.
    pub c0_frac: f64,
    pub big_c0: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            constant: 10.0,
            exponent_slack: 0.1,
            c0_frac: 0.5,
            big_c0: 2.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbePoint {
    pub label: String,
    pub error: f64,
    pub envelope: f64,
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub kind: ProbeKind,
    pub points: Vec<ProbePoint>,
    pub pass_fraction: f64,
    pub constant: f64,
    pub exponent_slack: f64,
    pub envelope_desc: String,
    pub skipped: Vec<String>,
    pub max_error: f64,
    pub max_ratio: f64,
}

impl ProbeReport {
    fn from_points(
        kind: ProbeKind,
        points: Vec<ProbePoint>,
        cfg: &ProbeConfig,
        envelope_desc: String,
        skipped: Vec<String>,
    ) -> Self {
        let passed = points.iter().filter(|p| p.pass).count();
        let pass_fraction = if points.is_empty() {
            0.0
        } else {
            passed as f64 / points.len() as f64
        };
        let max_error = points.iter().map(|p| p.error).fold(0.0, f64::max);
        let max_ratio = points.iter().map(|p| p.ratio).fold(0.0, f64::max);
        Self {
            kind,
            points,
            pass_fraction,
            constant: cfg.constant,
            exponent_slack: cfg.exponent_slack,
            envelope_desc,
            skipped,
            max_error,
            max_ratio,
        }
    }

    /// CSV with header `label,error,envelope,ratio,pass`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "label,error,envelope,ratio,pass")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.label, p.error, p.envelope, p.ratio, p.pass
            )?;
        }
        Ok(())
    }
}

/// Surrogate for the rigidity scale `eta_0`.
fn eta0(big_n: usize) -> f64 {
    (big_n as f64).ln() / big_n as f64
}

/// Averaged local law: per grid point, `|m - m_c|` averaged over replicas
/// against `(N eta)^{-1}` inside the spectrum and the stronger
/// `N^{-1}(kappa+eta)^{-1} + (N eta)^{-2}(kappa+eta)^{-1/2}` outside.
pub fn averaged_law_probe(
    model: &SpectralModel,
    spectra: &[SampleSpectrum],
    zs: &[ComplexPoint],
    edge: &EdgeReport,
    solver_cfg: &SolverConfig,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if spectra.is_empty() {
        return Err(Error::EmptySample);
    }
    let big_n = spectra[0].big_n as f64;
    let n_eps = big_n.powf(cfg.exponent_slack);
    let lambda = edge.lambda_plus;
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &z in zs {
        let (e, eta) = (z.e(), z.eta());
        let in_domain = e >= lambda - cfg.c0_frac * lambda
            && e <= cfg.big_c0 * lambda
            && eta <= 1.0
            && eta >= big_n.powf(-1.0 + cfg.exponent_slack);
        if !in_domain {
            skipped.push(format!("z = {e}+{eta}i outside the probe domain"));
            continue;
        }
        let sol = solve_at(model, z, solver_cfg)?;
        let error = spectra
            .iter()
            .map(|s| (empirical_stieltjes(s, z) - sol.mc).norm())
            .sum::<f64>()
            / spectra.len() as f64;
        let kappa = z.kappa(lambda);
        let outside = e >= lambda && big_n * eta * (kappa + eta).sqrt() >= n_eps;
        let envelope = if outside {
            1.0 / (big_n * (kappa + eta))
                + 1.0 / ((big_n * eta).powi(2) * (kappa + eta).sqrt())
        } else {
            1.0 / (big_n * eta)
        };
        let bound = cfg.constant * n_eps * envelope;
        points.push(ProbePoint {
            label: format!("{e}+{eta}i"),
            error,
            envelope,
            ratio: error / bound,
            pass: error <= bound,
        });
    }
    Ok(ProbeReport::from_points(
        ProbeKind::Averaged,
        points,
        cfg,
        "inside: 1/(N eta); outside: 1/(N(kappa+eta)) + 1/((N eta)^2 sqrt(kappa+eta))".into(),
        skipped,
    ))
}

/// Quadratic form `<u, G(z) v>` assembled from the spectral decomposition
/// of the sampled factor; `u`, `v` live on the joint index set of size
/// `n + N`.
pub fn g_quadratic_form(
    spectrum: &SampleSpectrum,
    z: ComplexPoint,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<Complex64> {
    let vectors = spectrum.vectors.as_ref().ok_or(Error::VectorsNotRetained)?;
    let n = spectrum.n;
    let big_n = spectrum.big_n;
    if u.len() != n + big_n || v.len() != n + big_n {
        return Err(Error::DimensionMismatch(format!(
            "test vectors must have length {} (got {}, {})",
            n + big_n,
            u.len(),
            v.len()
        )));
    }
    let zc = z.z();
    let u1 = u.rows(0, n);
    let u2 = u.rows(n, big_n);
    let v1 = v.rows(0, n);
    let v2 = v.rows(n, big_n);
    // Overlaps with each singular vector.
    let a = vectors.xi.transpose() * u1;
    let b = vectors.xi.transpose() * v1;
    let c = vectors.zeta.transpose() * u2;
    let e = vectors.zeta.transpose() * v2;

    // Completing the singular basis contributes -u1.v1 on the upper block
    // and -(u2.v2)/z on the lower block.
    let mut total = Complex64::new(-u1.dot(&v1), 0.0) - u2.dot(&v2) / zc;
    for (k, &lambda) in spectrum.eigenvalues.iter().enumerate() {
        let denom = Complex64::new(lambda, 0.0) - zc;
        let root = lambda.sqrt();
        total += lambda / denom * a[k] * b[k];
        total += root / denom * (a[k] * e[k] + c[k] * b[k]);
        total += lambda / (zc * denom) * c[k] * e[k];
    }
    Ok(total)
}

/// Quadratic form `<u, Pi(z) v>` of the deterministic limit, with the
/// per-coordinate spectra of the two factors expanded to full dimension.
pub fn pi_quadratic_form(
    model: &SpectralModel,
    sol: &DysonSolution,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Complex64 {
    let n = model.n();
    let big_n = model.big_n();
    let z = sol.z.z();
    let one = Complex64::new(1.0, 0.0);
    let sigma_a = model.expanded_sigma_a();
    let sigma_b = model.expanded_sigma_b();
    let mut total = Complex64::new(0.0, 0.0);
    for i in 0..n {
        total += u[i] * v[i] * (-one / (one + sol.m2c * sigma_a[i]));
    }
    for mu in 0..big_n {
        total += u[n + mu] * v[n + mu] * (-one / (z * (one + sol.m1c * sigma_b[mu])));
    }
    total
}

fn unit_sphere_vector<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Anisotropic local law: max over seeded unit vector pairs of
/// `|<u, (G - Pi) v>|` against `q + Psi(z)`.
pub fn anisotropic_probe(
    model: &SpectralModel,
    spectrum: &SampleSpectrum,
    z: ComplexPoint,
    num_pairs: usize,
    seed: u64,
    q_support: f64,
    solver_cfg: &SolverConfig,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if spectrum.vectors.is_none() {
        return Err(Error::VectorsNotRetained);
    }
    let sol = solve_at(model, z, solver_cfg)?;
    let psi = control_psi(&sol, spectrum.big_n);
    let big_n = spectrum.big_n as f64;
    let n_eps = big_n.powf(cfg.exponent_slack);
    let envelope = q_support + psi;
    let bound = cfg.constant * n_eps * envelope;
    let dim = spectrum.n + spectrum.big_n;
    let mut rng = derive_rng(seed, "aniso-pairs", 0);
    let mut points = Vec::with_capacity(num_pairs);
    for pair in 0..num_pairs {
        let u = unit_sphere_vector(&mut rng, dim);
        let v = unit_sphere_vector(&mut rng, dim);
        let g = g_quadratic_form(spectrum, z, &u, &v)?;
        let pi = pi_quadratic_form(model, &sol, &u, &v);
        let error = (g - pi).norm();
        points.push(ProbePoint {
            label: format!("pair{pair}"),
            error,
            envelope,
            ratio: error / bound,
            pass: error <= bound,
        });
    }
    Ok(ProbeReport::from_points(
        ProbeKind::Anisotropic,
        points,
        cfg,
        "q + Psi(z)".into(),
        Vec::new(),
    ))
}

/// Rigidity: per index, the scaled deviation
/// `|lambda_j - gamma_j| j^{1/3} N^{2/3}` against `1 + j^{1/3} N^{2/3}
/// eta_0` with the `log(N)/N` surrogate scale.
pub fn rigidity_probe(
    spectrum: &SampleSpectrum,
    locations: &ClassicalLocations,
    j_range: (usize, usize),
) -> Result<ProbeReport> {
    let (j_lo, j_hi) = j_range;
    if j_lo == 0 || j_hi < j_lo || j_hi > locations.j_max() || j_hi > spectrum.eigenvalues.len() {
        return Err(Error::DimensionMismatch(format!(
            "rigidity range [{j_lo}, {j_hi}] outside computed locations \
             ({} available, {} eigenvalues)",
            locations.j_max(),
            spectrum.eigenvalues.len()
        )));
    }
    let big_n = spectrum.big_n as f64;
    let eta = eta0(spectrum.big_n);
    let cfg = ProbeConfig::default();
    let mut points = Vec::with_capacity(j_hi - j_lo + 1);
    for j in j_lo..=j_hi {
        let scale = (j as f64).powf(1.0 / 3.0) * big_n.powf(2.0 / 3.0);
        let dev = (spectrum.eigenvalues[j - 1] - locations.gamma(j)).abs() * scale;
        let envelope = 1.0 + scale * eta;
        let bound = cfg.constant * envelope;
        points.push(ProbePoint {
            label: format!("j={j}"),
            error: dev,
            envelope,
            ratio: dev / bound,
            pass: dev <= bound,
        });
    }
    Ok(ProbeReport::from_points(
        ProbeKind::Rigidity,
        points,
        &cfg,
        "1 + j^{1/3} N^{2/3} log(N)/N".into(),
        Vec::new(),
    ))
}

/// Self-check at toy size: draws a Gaussian factor for the model, builds
/// the resolvent two ways — the spectral representation against the dense
/// inverse of the linearized block matrix — and returns the worst
/// quadratic-form deviation over seeded unit vectors.
pub fn dense_inverse_check(model: &SpectralModel, z: ComplexPoint, seed: u64) -> Result<f64> {
    use nalgebra::DMatrix;
    let n = model.n();
    let big_n = model.big_n();
    let sigma_a = model.expanded_sigma_a();
    let sigma_b = model.expanded_sigma_b();
    let mut rng = derive_rng(seed, "dense-oracle", 0);
    let scale = 1.0 / (big_n as f64).sqrt();
    let mut m = DMatrix::<f64>::from_fn(n, big_n, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    });
    for i in 0..n {
        for j in 0..big_n {
            m[(i, j)] *= sigma_a[i].sqrt() * sigma_b[j].sqrt();
        }
    }
    let svd = m.clone().svd(true, true);
    let spectrum = SampleSpectrum {
        eigenvalues: svd.singular_values.iter().map(|s| s * s).collect(),
        seed,
        law_id: "gaussian".into(),
        rotated: false,
        n,
        big_n,
        vectors: Some(crate::ensemble::SpectrumVectors {
            xi: svd.u.expect("left vectors"),
            zeta: svd.v_t.expect("right vectors").transpose(),
        }),
    };
    let zc = z.z();
    let dim = n + big_n;
    let mut block = DMatrix::<Complex64>::zeros(dim, dim);
    for i in 0..n {
        block[(i, i)] = Complex64::new(-1.0, 0.0);
    }
    for mu in 0..big_n {
        block[(n + mu, n + mu)] = -zc;
    }
    for i in 0..n {
        for mu in 0..big_n {
            block[(i, n + mu)] = Complex64::new(m[(i, mu)], 0.0);
            block[(n + mu, i)] = Complex64::new(m[(i, mu)], 0.0);
        }
    }
    let dense = block
        .try_inverse()
        .ok_or_else(|| Error::EdgeSearch("linearized block matrix not invertible".into()))?;
    let mut rng = derive_rng(seed, "dense-oracle-vectors", 1);
    let mut worst = 0.0f64;
    for _ in 0..8 {
        let u = unit_sphere_vector(&mut rng, dim);
        let v = unit_sphere_vector(&mut rng, dim);
        let spectral = g_quadratic_form(&spectrum, z, &u, &v)?;
        let mut direct = Complex64::new(0.0, 0.0);
        for i in 0..dim {
            for j in 0..dim {
                direct += u[i] * dense[(i, j)] * v[j];
            }
        }
        worst = worst.max((spectral - direct).norm());
    }
    // The empirical transform must equal the normalized upper-block trace.
    let mut trace = Complex64::new(0.0, 0.0);
    for i in 0..n {
        trace += dense[(i, i)];
    }
    let m_emp = empirical_stieltjes(&spectrum, z);
    worst = worst.max((trace / (n as f64 * zc) - m_emp).norm());
    Ok(worst)
}

/// Isotropic delocalization: max over edge eigenvectors and seeded test
/// vectors of `<u, xi_k>^2 + <v, zeta_k>^2` against `log(N)/N`.
pub fn delocalization_probe(
    spectrum: &SampleSpectrum,
    edge: &EdgeReport,
    num_vectors: usize,
    seed: u64,
    window_c1: f64,
) -> Result<ProbeReport> {
    let vectors = spectrum.vectors.as_ref().ok_or(Error::VectorsNotRetained)?;
    let cfg = ProbeConfig::default();
    let envelope = eta0(spectrum.big_n);
    let bound = cfg.constant * envelope;
    let mut rng = derive_rng(seed, "delocal-vectors", 0);
    let us: Vec<DVector<f64>> = (0..num_vectors)
        .map(|_| unit_sphere_vector(&mut rng, spectrum.n))
        .collect();
    let vs: Vec<DVector<f64>> = (0..num_vectors)
        .map(|_| unit_sphere_vector(&mut rng, spectrum.big_n))
        .collect();
    let mut points = Vec::new();
    for (k, &lambda) in spectrum.eigenvalues.iter().enumerate() {
        if lambda < edge.lambda_plus - window_c1 {
            break;
        }
        let xi = vectors.xi.column(k);
        let zeta = vectors.zeta.column(k);
        let mut worst = 0.0f64;
        for (u, v) in us.iter().zip(&vs) {
            let overlap = xi.dot(u).powi(2) + zeta.dot(v).powi(2);
            worst = worst.max(overlap);
        }
        points.push(ProbePoint {
            label: format!("k={}", k + 1),
            error: worst,
            envelope,
            ratio: worst / bound,
            pass: worst <= bound,
        });
    }
    Ok(ProbeReport::from_points(
        ProbeKind::Delocalization,
        points,
        &cfg,
        "log(N)/N".into(),
        Vec::new(),
    ))
}
