//! Seeded sampling of separable covariance ensembles: entry laws
//! (Gaussian, bounded, heavy-tailed, truncated), Haar frames, spectra, and
//! batch runs of the rescaled largest-eigenvalue statistic.

use crate::edge::EdgeReport;
use crate::error::{Error, Result};
use crate::model::SpectralModel;
use crate::seeding::{derive_rng, derive_seed};
use nalgebra::DMatrix;
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use statrs::function::erf::erfc;

/// Recorded moments of an entry law.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub third: f64,
    /// Whether `s^4 P(|q| >= s) -> 0`, the tail condition under which edge
    /// universality holds.
    pub tail_condition: bool,
}

#[derive(Debug, Clone)]
enum LawSpec {
    Gaussian,
    SymmetricBernoulli,
    HeavyTail {
        c: f64,
        log_power: f64,
        /// Left end of the raw support: `s0^4 ln^p(e + s0) = c`.
        s0: f64,
        /// Raw standard deviation; samples are divided by it.
        sigma: f64,
    },
    Truncated {
        base: Box<EntryLaw>,
        epsilon: f64,
        big_n: u64,
        cutoff: f64,
        alpha_n: f64,
        beta_n: f64,
        shift: f64,
        second_moment: f64,
    },
}

/// A zero-mean unit-variance entry distribution.
#[derive(Debug, Clone)]
pub struct EntryLaw {
    spec: LawSpec,
    moments: Moments,
    id: String,
}

fn heavy_raw_survival(c: f64, p: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    (c / (s.powi(4) * (std::f64::consts::E + s).ln().powf(p))).min(1.0)
}

/// Solves `s^4 ln^p(e+s) = c/u` for `s`, Newton on the log form.
fn heavy_tail_inverse(c: f64, p: f64, u: f64) -> f64 {
    let rhs = (c / u).ln();
    let mut s = (c / u).powf(0.25).max(1e-12);
    let refine = (c / u / (std::f64::consts::E + s).ln().powf(p)).powf(0.25);
    if refine.is_finite() && refine > 0.0 {
        s = refine;
    }
    for _ in 0..60 {
        let le = (std::f64::consts::E + s).ln();
        let phi = 4.0 * s.ln() + p * le.ln() - rhs;
        let dphi = 4.0 / s + p / ((std::f64::consts::E + s) * le);
        let step = phi / dphi;
        s -= step;
        if step.abs() <= 1e-14 * s.abs() {
            break;
        }
    }
    s
}

/// `int_lo^inf 2 s S(s) ds` for the raw heavy-tail survival, by Simpson on
/// the substitution `s = lo / t`.
fn heavy_tail_second_moment_tail(c: f64, p: f64, lo: f64) -> f64 {
    let integrand = |t: f64| -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let s = lo / t;
        2.0 * s * heavy_raw_survival(c, p, s) * lo / (t * t)
    };
    let n = 4000;
    let h = 1.0 / n as f64;
    let mut sum = integrand(1.0);
    for k in 0..n {
        let t0 = k as f64 * h;
        let t1 = t0 + 0.5 * h;
        sum += if k == 0 { 0.0 } else { 2.0 * integrand(t0) };
        sum += 4.0 * integrand(t1);
    }
    sum * h / 6.0
}

impl EntryLaw {
    pub fn gaussian() -> Self {
        Self {
            spec: LawSpec::Gaussian,
            moments: Moments {
                mean: 0.0,
                variance: 1.0,
                third: 0.0,
                tail_condition: true,
            },
            id: "gaussian".into(),
        }
    }

    pub fn symmetric_bernoulli() -> Self {
        Self {
            spec: LawSpec::SymmetricBernoulli,
            moments: Moments {
                mean: 0.0,
                variance: 1.0,
                third: 0.0,
                tail_condition: true,
            },
            id: "symmetric_bernoulli".into(),
        }
    }

    /// Symmetric law with raw survival `P(|q| > s) = min(1, c / (s^4
    /// ln^p(e+s)))`, normalized to unit variance. Satisfies the
    /// edge-universality tail condition for any `p > 0` while the fourth
    /// moment diverges for `p <= 1`.
    pub fn heavy_tail(c: f64) -> Result<Self> {
        Self::heavy_tail_with_power(c, 2.0)
    }

    pub fn heavy_tail_with_power(c: f64, log_power: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidLaw(format!("tail constant c = {c}")));
        }
        if !(log_power > 0.0) {
            return Err(Error::InvalidLaw(format!("log power p = {log_power}")));
        }
        // s0 solves s^4 ln^p(e+s) = c.
        let s0 = heavy_tail_inverse(c, log_power, 1.0);
        let second = s0 * s0 + heavy_tail_second_moment_tail(c, log_power, s0);
        if !(second > 0.0) || !second.is_finite() {
            return Err(Error::InvalidLaw(format!(
                "unnormalizable heavy tail: E q^2 = {second}"
            )));
        }
        let sigma = second.sqrt();
        Ok(Self {
            spec: LawSpec::HeavyTail {
                c,
                log_power,
                s0,
                sigma,
            },
            moments: Moments {
                mean: 0.0,
                variance: 1.0,
                third: 0.0,
                tail_condition: true,
            },
            id: format!("heavy_tail(c={c},p={log_power})"),
        })
    }

    /// `P(|q| > s)` for the normalized law.
    pub fn survival(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 1.0;
        }
        match &self.spec {
            LawSpec::Gaussian => erfc(s / std::f64::consts::SQRT_2),
            LawSpec::SymmetricBernoulli => {
                if s < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            LawSpec::HeavyTail {
                c, log_power, sigma, ..
            } => heavy_raw_survival(*c, *log_power, s * sigma),
            LawSpec::Truncated {
                base,
                cutoff,
                alpha_n,
                shift,
                ..
            } => {
                // Survival of the conditioned-and-shifted variable.
                let t = s - shift.abs();
                if t > *cutoff {
                    0.0
                } else {
                    ((base.survival(t.max(0.0)) - alpha_n) / (1.0 - alpha_n)).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// `E[q^2 1(|q| > s)]` for the normalized law, via survival-function
    /// quadrature.
    pub fn second_moment_tail(&self, s: f64) -> f64 {
        match &self.spec {
            LawSpec::Gaussian => {
                let phi = (-0.5 * s * s).exp() / (2.0 * std::f64::consts::PI).sqrt();
                2.0 * s * phi + erfc(s / std::f64::consts::SQRT_2)
            }
            LawSpec::SymmetricBernoulli => {
                if s < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            LawSpec::HeavyTail {
                c,
                log_power,
                sigma,
                s0,
            } => {
                let raw = (s * sigma).max(*s0);
                let tail = raw * raw * heavy_raw_survival(*c, *log_power, raw)
                    + heavy_tail_second_moment_tail(*c, *log_power, raw);
                tail / (sigma * sigma)
            }
            LawSpec::Truncated { .. } => 0.0,
        }
    }

    /// One-sided first tail moment `E[q 1(q > s)]`, by quadrature of the
    /// survival function: `s P(q>s) + int_s^inf P(q>t) dt`.
    fn upper_tail_mean(&self, s: f64) -> f64 {
        let half_survival = |t: f64| 0.5 * self.survival(t);
        let mut integral = 0.0;
        // The built-in survivals decay at least like t^-4; integrate far
        // enough that the remainder is negligible.
        let mut width = 1.0f64.max(s * 0.5);
        let mut lo = s;
        for _ in 0..200 {
            let n = 64;
            let h = width / n as f64;
            let mut seg = half_survival(lo) + half_survival(lo + width);
            for k in 1..n {
                seg += 2.0 * half_survival(lo + k as f64 * h);
            }
            for k in 0..n {
                seg += 4.0 * half_survival(lo + (k as f64 + 0.5) * h);
            }
            let seg = seg * h / 6.0;
            integral += seg;
            lo += width;
            width *= 2.0;
            if seg < 1e-18 {
                break;
            }
        }
        s * half_survival(s) + integral
    }

    /// Law of the entries conditioned on `|q| <= N^{1/2 - epsilon}` and
    /// recentred so the mean is exactly zero. Returns the law together
    /// with the cut probability `alpha_N` and the cut first moment
    /// `beta_N`.
    pub fn truncated(base: EntryLaw, epsilon: f64, big_n: u64) -> Result<(EntryLaw, f64, f64)> {
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::InvalidLaw(format!(
                "truncation exponent epsilon = {epsilon} outside (0, 1/2)"
            )));
        }
        if matches!(base.spec, LawSpec::Truncated { .. }) {
            return Err(Error::InvalidLaw("cannot truncate a truncated law".into()));
        }
        let cutoff = (big_n as f64).powf(0.5 - epsilon);
        let alpha_n = base.survival(cutoff);
        if alpha_n >= 1.0 {
            return Err(Error::InvalidLaw(format!(
                "cutoff {cutoff} removes all mass (alpha_N = {alpha_n})"
            )));
        }
        // beta_N = E[q 1(q > cut)] - E[-q 1(q < -cut)]; both tails are
        // computed from the survival so asymmetric bases would work, and
        // the symmetric built-ins cancel exactly.
        let upper = base.upper_tail_mean(cutoff);
        let lower = base.upper_tail_mean(cutoff);
        let beta_n = upper - lower;
        let shift = beta_n / (1.0 - alpha_n);
        let tail2 = base.second_moment_tail(cutoff);
        let second_moment = (base.moments.variance - tail2) / (1.0 - alpha_n)
            - 2.0 * shift * beta_n / (1.0 - alpha_n)
            + shift * shift;
        let id = format!("truncated({},eps={epsilon},N={big_n})", base.id);
        let moments = Moments {
            mean: 0.0,
            variance: second_moment,
            third: base.moments.third,
            tail_condition: true,
        };
        Ok((
            EntryLaw {
                spec: LawSpec::Truncated {
                    base: Box::new(base),
                    epsilon,
                    big_n,
                    cutoff,
                    alpha_n,
                    beta_n,
                    shift,
                    second_moment,
                },
                moments,
                id,
            },
            alpha_n,
            beta_n,
        ))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.spec {
            LawSpec::Gaussian => rng.sample(StandardNormal),
            LawSpec::SymmetricBernoulli => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            LawSpec::HeavyTail {
                c,
                log_power,
                sigma,
                ..
            } => {
                let u: f64 = loop {
                    let u = rng.random::<f64>();
                    if u > 0.0 {
                        break u;
                    }
                };
                let magnitude = heavy_tail_inverse(*c, *log_power, u) / sigma;
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
            LawSpec::Truncated {
                base,
                cutoff,
                shift,
                ..
            } => loop {
                let q = base.sample(rng);
                if q.abs() <= *cutoff {
                    break q + shift;
                }
            },
        }
    }

    pub fn moments(&self) -> Moments {
        self.moments
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Exponent `phi` such that matrix entries are bounded by `N^{-phi}`
    /// (up to logs); `None` when the law has unbounded support growth.
    pub fn support_exponent(&self) -> Option<f64> {
        match &self.spec {
            LawSpec::Gaussian | LawSpec::SymmetricBernoulli => Some(0.5),
            LawSpec::HeavyTail { .. } => None,
            LawSpec::Truncated { epsilon, .. } => Some(*epsilon),
        }
    }

    /// Serializable descriptor sufficient for exact replay.
    pub fn descriptor(&self) -> serde_json::Value {
        match &self.spec {
            LawSpec::Gaussian => json!({"kind": "gaussian"}),
            LawSpec::SymmetricBernoulli => json!({"kind": "symmetric_bernoulli"}),
            LawSpec::HeavyTail { c, log_power, .. } => {
                json!({"kind": "heavy_tail", "c": c, "log_power": log_power})
            }
            LawSpec::Truncated {
                base,
                epsilon,
                big_n,
                alpha_n,
                beta_n,
                ..
            } => json!({
                "kind": "truncated",
                "base": base.descriptor(),
                "epsilon": epsilon,
                "N": big_n,
                "alpha_N": alpha_n,
                "beta_N": beta_n,
            }),
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of a standard Gaussian matrix
/// with the R-diagonal sign correction.
pub fn haar_orthogonal(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = derive_rng(seed, "haar", 0);
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            for i in 0..dim {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Left/right singular vectors of the sampled factor, kept on request.
#[derive(Debug, Clone)]
pub struct SpectrumVectors {
    /// Columns are the left singular vectors, `n x K`.
    pub xi: DMatrix<f64>,
    /// Columns are the right singular vectors, `N x K`.
    pub zeta: DMatrix<f64>,
}

/// Eigenvalues (and optionally singular vectors) of one sampled matrix.
#[derive(Debug, Clone)]
pub struct SampleSpectrum {
    /// Descending eigenvalues, `min(n, N)` of them; the remaining
    /// eigenvalues of the square matrix are implicit zeros.
    pub eigenvalues: Vec<f64>,
    pub seed: u64,
    pub law_id: String,
    pub rotated: bool,
    pub n: usize,
    pub big_n: usize,
    pub vectors: Option<SpectrumVectors>,
}

impl SampleSpectrum {
    pub fn lambda1(&self) -> f64 {
        self.eigenvalues[0]
    }
}

/// How batch replicas pick the eigenvector frames of the two covariance
/// factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RotationSetting {
    /// Both frames are identity (diagonal covariances).
    Diagonal,
    /// One Haar draw per batch, shared across replicas.
    HaarFixed { frame_seed: u64 },
    /// Fresh Haar frames for every replica.
    HaarPerReplica,
}

fn sample_with_frames(
    model: &SpectralModel,
    law: &EntryLaw,
    seed: u64,
    frames: Option<&(DMatrix<f64>, DMatrix<f64>)>,
    keep_vectors: bool,
) -> Result<SampleSpectrum> {
    let n = model.n();
    let big_n = model.big_n();
    let sigma_a = model.expanded_sigma_a();
    let sigma_b = model.expanded_sigma_b();
    let scale = 1.0 / (big_n as f64).sqrt();
    let mut rng = derive_rng(seed, "entries", 0);
    let x = DMatrix::<f64>::from_fn(n, big_n, |_, _| scale * law.sample(&mut rng));

    let mut m = match frames {
        Some((u, v)) => u.transpose() * x * v,
        None => x,
    };
    for i in 0..n {
        let root = sigma_a[i].sqrt();
        for j in 0..big_n {
            m[(i, j)] *= root;
        }
    }
    for j in 0..big_n {
        let root = sigma_b[j].sqrt();
        for i in 0..n {
            m[(i, j)] *= root;
        }
    }

    let svd = m
        .try_svd(keep_vectors, keep_vectors, f64::EPSILON, 0)
        .ok_or(Error::SvdFailure { seed })?;
    let eigenvalues: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    let vectors = if keep_vectors {
        Some(SpectrumVectors {
            xi: svd.u.expect("left vectors requested"),
            zeta: svd.v_t.expect("right vectors requested").transpose(),
        })
    } else {
        None
    };
    Ok(SampleSpectrum {
        eigenvalues,
        seed,
        law_id: law.id().to_string(),
        rotated: frames.is_some(),
        n,
        big_n,
        vectors,
    })
}

/// Draws one spectrum. Entries are `N^{-1/2} q` with `q` from the law; the
/// eigenvalues are the squared singular values of the scaled factor.
pub fn sample_spectrum(
    model: &SpectralModel,
    law: &EntryLaw,
    seed: u64,
    rotated: bool,
    keep_vectors: bool,
) -> Result<SampleSpectrum> {
    let frames = if rotated {
        Some((
            haar_orthogonal(model.n(), derive_seed(seed, u64::from(u32::MAX))),
            haar_orthogonal(model.big_n(), derive_seed(seed, u64::from(u32::MAX) + 1)),
        ))
    } else {
        None
    };
    sample_with_frames(model, law, seed, frames.as_ref(), keep_vectors)
}

/// `gamma0 * N^{2/3} * (lambda1 - lambda_+)`.
pub fn rescale_stat(lambda1: f64, edge: &EdgeReport, big_n: usize) -> f64 {
    edge.gamma0 * (big_n as f64).powf(2.0 / 3.0) * (lambda1 - edge.lambda_plus)
}

/// One successful replica of a batch.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BatchRow {
    pub replica: usize,
    pub seed: u64,
    pub lambda1: f64,
    pub rescaled: f64,
}

/// A seeded collection of largest-eigenvalue samples under one entry law.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleBatch {
    pub model_hash: String,
    pub law_id: String,
    pub reps: usize,
    pub master_seed: u64,
    pub rotation: RotationSetting,
    pub rows: Vec<BatchRow>,
    pub failed: Vec<(usize, String)>,
    pub lambda_plus: f64,
    pub gamma0: f64,
    pub big_n: usize,
}

impl EnsembleBatch {
    pub fn lambda1s(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lambda1).collect()
    }

    pub fn rescaled(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rescaled).collect()
    }

    /// CSV with header `replica,seed,lambda1,rescaled`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "replica,seed,lambda1,rescaled")?;
        for row in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                row.replica, row.seed, row.lambda1, row.rescaled
            )?;
        }
        Ok(())
    }

    pub fn metadata(&self, law: &EntryLaw) -> serde_json::Value {
        json!({
            "model_hash": self.model_hash,
            "law": law.descriptor(),
            "reps": self.reps,
            "master_seed": self.master_seed,
            "rotation": self.rotation,
            "lambda_plus": self.lambda_plus,
            "gamma0": self.gamma0,
            "N": self.big_n,
            "failed": self.failed,
        })
    }
}

/// Runs `reps` independent replicas with per-replica seeds
/// `derive_seed(master_seed, i)`. Replicas run concurrently; the output is
/// identical for any thread count. Aborts if more than 1% of replicas
/// fail.
pub fn run_batch(
    model: &SpectralModel,
    law: &EntryLaw,
    reps: usize,
    master_seed: u64,
    rotation: RotationSetting,
    edge: &EdgeReport,
) -> Result<EnsembleBatch> {
    if reps == 0 {
        return Err(Error::InvalidLaw("batch needs reps >= 1".into()));
    }
    let frames = match rotation {
        RotationSetting::Diagonal | RotationSetting::HaarPerReplica => None,
        RotationSetting::HaarFixed { frame_seed } => Some((
            haar_orthogonal(model.n(), derive_seed(frame_seed, 0)),
            haar_orthogonal(model.big_n(), derive_seed(frame_seed, 1)),
        )),
    };
    let results: Vec<(usize, u64, std::result::Result<f64, String>)> = (0..reps)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, i as u64);
            let drawn = match rotation {
                RotationSetting::Diagonal => sample_with_frames(model, law, seed, None, false),
                RotationSetting::HaarFixed { .. } => {
                    sample_with_frames(model, law, seed, frames.as_ref(), false)
                }
                RotationSetting::HaarPerReplica => sample_spectrum(model, law, seed, true, false),
            };
            (
                i,
                seed,
                drawn.map(|s| s.lambda1()).map_err(|e| e.to_string()),
            )
        })
        .collect();

    let mut rows = Vec::with_capacity(reps);
    let mut failed = Vec::new();
    for (i, seed, res) in results {
        match res {
            Ok(lambda1) => rows.push(BatchRow {
                replica: i,
                seed,
                lambda1,
                rescaled: rescale_stat(lambda1, edge, model.big_n()),
            }),
            Err(msg) => failed.push((i, msg)),
        }
    }
    if (rows.len() as f64) < 0.99 * reps as f64 {
        return Err(Error::BatchFailed {
            failed: failed.len(),
            reps,
        });
    }
    Ok(EnsembleBatch {
        model_hash: model.hash(),
        law_id: law.id().to_string(),
        reps,
        master_seed,
        rotation,
        rows,
        failed,
        lambda_plus: edge.lambda_plus,
        gamma0: edge.gamma0,
        big_n: model.big_n(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn law_moments_are_recorded() {
        let g = EntryLaw::gaussian();
        assert_eq!(g.moments().mean, 0.0);
        assert_eq!(g.moments().variance, 1.0);
        assert_eq!(g.moments().third, 0.0);
        let b = EntryLaw::symmetric_bernoulli();
        let mut rng = derive_rng(1, "test", 0);
        for _ in 0..16 {
            assert_eq!(b.sample(&mut rng).abs(), 1.0);
        }
    }

    #[test]
    fn heavy_tail_is_normalized_and_heavy() {
        let law = EntryLaw::heavy_tail(1.0).unwrap();
        let mut rng = derive_rng(2, "test", 0);
        let m = 200_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..m {
            let q = law.sample(&mut rng);
            sum += q;
            sum2 += q * q;
        }
        let mean = sum / m as f64;
        let var = sum2 / m as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        // Infinite-kurtosis-adjacent laws converge slowly; generous band.
        assert!((var - 1.0).abs() < 0.25, "variance {var}");
        // Tail condition at moderate s, against the constructed survival.
        let s = 50.0;
        assert!((s as f64).powi(4) * law.survival(s) < 0.3);
        assert!(60f64.powi(4) * law.survival(60.0) < s.powi(4) * law.survival(s));
    }

    #[test]
    fn heavy_tail_empirical_tail_matches_survival() {
        let law = EntryLaw::heavy_tail(1.0).unwrap();
        let mut rng = derive_rng(3, "test", 0);
        let m = 10_000_000usize;
        let s = 5.0;
        let mut count = 0usize;
        for _ in 0..m {
            if law.sample(&mut rng).abs() > s {
                count += 1;
            }
        }
        let empirical = count as f64 / m as f64;
        let predicted = law.survival(s);
        let stderr = (predicted * (1.0 - predicted) / m as f64).sqrt();
        assert!(
            (empirical - predicted).abs() < 5.0 * stderr + 1e-7,
            "empirical {empirical}, predicted {predicted}"
        );
    }

    #[test]
    fn truncated_symmetric_base_has_zero_shift() {
        // Cutoff 100^{0.5-0.3} = 10^{0.4}, where the Gaussian tail mass is
        // still visible.
        let (law, alpha, beta) = EntryLaw::truncated(EntryLaw::gaussian(), 0.3, 100).unwrap();
        assert_eq!(beta, 0.0);
        let cutoff = 10f64.powf(0.4);
        assert_relative_eq!(
            alpha,
            erfc(cutoff / std::f64::consts::SQRT_2),
            epsilon = 1e-15
        );
        assert!(law.moments().variance < 1.0);
        let mut rng = derive_rng(4, "test", 0);
        let m = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..m {
            sum += law.sample(&mut rng);
        }
        let mean = sum / m as f64;
        let se = (law.moments().variance / m as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");

        // At practical sizes the Gaussian cut is far beyond the support.
        let (_, alpha, beta) = EntryLaw::truncated(EntryLaw::gaussian(), 0.1, 10_000).unwrap();
        assert_eq!(beta, 0.0);
        assert!(alpha < 1e-300);
    }

    #[test]
    fn truncated_bounded_base_is_identity() {
        let (law, alpha, beta) =
            EntryLaw::truncated(EntryLaw::symmetric_bernoulli(), 0.2, 10_000).unwrap();
        assert_eq!(alpha, 0.0);
        assert_eq!(beta, 0.0);
        assert_relative_eq!(law.moments().variance, 1.0, epsilon = 1e-12);
        let mut rng = derive_rng(5, "test", 0);
        for _ in 0..16 {
            assert_eq!(law.sample(&mut rng).abs(), 1.0);
        }
    }

    #[test]
    fn truncated_rejects_bad_epsilon() {
        assert!(EntryLaw::truncated(EntryLaw::gaussian(), 0.0, 100).is_err());
        assert!(EntryLaw::truncated(EntryLaw::gaussian(), 0.5, 100).is_err());
    }

    #[test]
    fn haar_is_orthogonal() {
        let q = haar_orthogonal(1, 11);
        assert_relative_eq!(q[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        let q = haar_orthogonal(50, 12);
        let gram = q.transpose() * &q;
        let mut err: f64 = 0.0;
        for i in 0..50 {
            for j in 0..50 {
                let expected = if i == j { 1.0 } else { 0.0 };
                err = err.max((gram[(i, j)] - expected).abs());
            }
        }
        assert!(err <= 1e-10, "orthonormality error {err}");
    }

    #[test]
    fn haar_diagonal_variance() {
        // Haar columns are uniform on the sphere, so diagonal entries have
        // variance ~ 1/dim.
        let dim = 200;
        let draws = 500;
        let mut sum2 = 0.0;
        let mut count = 0usize;
        for k in 0..draws {
            let q = haar_orthogonal(dim, 1000 + k);
            for i in (0..dim).step_by(29) {
                sum2 += q[(i, i)] * q[(i, i)];
                count += 1;
            }
        }
        let var = sum2 / count as f64;
        let expected = 1.0 / dim as f64;
        assert!(
            (var - expected).abs() < 0.3 * expected,
            "variance {var} vs {expected}"
        );
    }

    #[test]
    fn degenerate_model_gives_zero_spectrum() {
        let model = SpectralModel::new(&[(0.0, 1.0)], &[(0.0, 1.0)], 20, 40).unwrap();
        let s = sample_spectrum(&model, &EntryLaw::gaussian(), 1, false, false).unwrap();
        assert!(s.eigenvalues.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn spectra_are_reproducible_and_sorted() {
        let model = SpectralModel::new(
            &[(1.0, 0.5), (4.0, 0.5)],
            &[(1.0, 0.5), (4.0, 0.5)],
            30,
            60,
        )
        .unwrap();
        let a = sample_spectrum(&model, &EntryLaw::gaussian(), 42, true, false).unwrap();
        let b = sample_spectrum(&model, &EntryLaw::gaussian(), 42, true, false).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert!(a.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(a.eigenvalues.iter().all(|&l| l >= 0.0));
        assert_eq!(a.eigenvalues.len(), 30);
    }

    #[test]
    fn product_orders_share_nonzero_spectrum() {
        // Eigenvalues of M M^T and M^T M agree on nonzero values.
        let model = SpectralModel::new(&[(2.0, 1.0)], &[(1.0, 0.5), (3.0, 0.5)], 8, 12).unwrap();
        let s = sample_spectrum(&model, &EntryLaw::gaussian(), 9, false, true).unwrap();
        let v = s.vectors.as_ref().unwrap();
        // Rebuild M from its SVD and check both Gram spectra directly.
        let k = s.eigenvalues.len();
        let mut m = DMatrix::<f64>::zeros(8, 12);
        for j in 0..k {
            let sv = s.eigenvalues[j].sqrt();
            let xi = v.xi.column(j);
            let zeta = v.zeta.column(j);
            for r in 0..8 {
                for c in 0..12 {
                    m[(r, c)] += sv * xi[r] * zeta[c];
                }
            }
        }
        let q1 = (&m) * m.transpose();
        let q2 = m.transpose() * (&m);
        let mut e1: Vec<f64> = q1.symmetric_eigen().eigenvalues.iter().cloned().collect();
        let mut e2: Vec<f64> = q2.symmetric_eigen().eigenvalues.iter().cloned().collect();
        e1.sort_by(|a, b| b.partial_cmp(a).unwrap());
        e2.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for j in 0..8 {
            if e1[j] > 1e-10 {
                assert_relative_eq!(e1[j], e2[j], max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn batch_is_deterministic_and_matches_single_draws() {
        let model = SpectralModel::null_mp(20, 40).unwrap();
        let edge = crate::edge::find_rightmost_edge(&model, 0.05).unwrap();
        let law = EntryLaw::gaussian();
        let b1 = run_batch(&model, &law, 5, 777, RotationSetting::Diagonal, &edge).unwrap();
        let b2 = run_batch(&model, &law, 5, 777, RotationSetting::Diagonal, &edge).unwrap();
        assert_eq!(b1.lambda1s(), b2.lambda1s());
        // reps = 1 equals a direct draw at the derived seed.
        let single = run_batch(&model, &law, 1, 777, RotationSetting::Diagonal, &edge).unwrap();
        let direct = sample_with_frames(&model, &law, derive_seed(777, 0), None, false).unwrap();
        assert_eq!(single.rows[0].lambda1, direct.lambda1());
        assert_eq!(single.rows[0].seed, derive_seed(777, 0));
        // Rescaling is the stated affine map, elementwise.
        for row in &b1.rows {
            assert_eq!(
                row.rescaled,
                rescale_stat(row.lambda1, &edge, model.big_n())
            );
        }
    }

    #[test]
    fn rescale_is_affine_inverse() {
        let model = SpectralModel::null_mp(50, 100).unwrap();
        let edge = crate::edge::find_rightmost_edge(&model, 0.05).unwrap();
        assert_eq!(rescale_stat(edge.lambda_plus, &edge, 100), 0.0);
        let lifted = edge.lambda_plus + (100f64).powf(-2.0 / 3.0) / edge.gamma0;
        assert_relative_eq!(rescale_stat(lifted, &edge, 100), 1.0, epsilon = 1e-10);
    }
}
