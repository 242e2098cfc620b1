//! Distributional comparison machinery: empirical CDFs,
//! Kolmogorov-Smirnov tests, universality reports against a second entry
//! law, and the largest-eigenvalue signal-detection test.

use crate::edge::find_rightmost_edge;
use crate::ensemble::{rescale_stat, EnsembleBatch};
use crate::error::{Error, Result};
use crate::model::SpectralModel;
use crate::seeding::{derive_rng, derive_seed};
use crate::tw1::Tw1Table;
use nalgebra::DMatrix;
use rand::RngExt;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TestMethod {
    KsTwoSample,
    KsOneSample,
    McCalibrated,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub method: TestMethod,
}

/// Kolmogorov tail series `Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2
/// lambda^2)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Dual theta series, which converges fast for small lambda.
        let f = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let sum = (-f).exp() + (-9.0 * f).exp() + (-25.0 * f).exp() + (-49.0 * f).exp();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64 * lambda).powi(2)).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(statistic: f64, effective_n: f64) -> f64 {
    let root = effective_n.sqrt();
    kolmogorov_q((root + 0.12 + 0.11 / root) * statistic)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value at the
/// effective sample size `na nb / (na + nb)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let xa = sorted(a);
    let xb = sorted(b);
    let (na, nb) = (xa.len(), xb.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut statistic = 0.0f64;
    while i < na && j < nb {
        let d = if xa[i] <= xb[j] {
            let x = xa[i];
            while i < na && xa[i] == x {
                i += 1;
            }
            if j < nb && xb[j] == x {
                while j < nb && xb[j] == x {
                    j += 1;
                }
            }
            (i as f64 / na as f64 - j as f64 / nb as f64).abs()
        } else {
            let x = xb[j];
            while j < nb && xb[j] == x {
                j += 1;
            }
            (i as f64 / na as f64 - j as f64 / nb as f64).abs()
        };
        statistic = statistic.max(d);
    }
    statistic = statistic.max(1.0 - i as f64 / na as f64).max(1.0 - j as f64 / nb as f64);
    if i >= na || j >= nb {
        // Remaining tail of the other sample only widens the gap already
        // accounted for by the final CDF values.
        statistic = statistic.max((1.0 - i as f64 / na as f64).max(1.0 - j as f64 / nb as f64));
    }
    let effective = (na * nb) as f64 / (na + nb) as f64;
    Ok(TestResult {
        statistic,
        p_value: ks_p_value(statistic, effective),
        n_a: na,
        n_b: nb,
        method: TestMethod::KsTwoSample,
    })
}

/// One-sample Kolmogorov-Smirnov distance against a reference CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<TestResult> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let xs = sorted(sample);
    let n = xs.len() as f64;
    let mut statistic = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        statistic = statistic
            .max(((i + 1) as f64 / n - f).abs())
            .max((i as f64 / n - f).abs());
    }
    Ok(TestResult {
        statistic,
        p_value: ks_p_value(statistic, n),
        n_a: xs.len(),
        n_b: 0,
        method: TestMethod::KsOneSample,
    })
}

/// Interpolated CDF of the embedded type-1 Tracy-Widom table.
pub fn tw1_cdf(s: f64) -> f64 {
    Tw1Table::embedded().cdf(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct UniversalitySummary {
    pub law_a: String,
    pub law_b: String,
    pub mean_a: f64,
    pub sd_a: f64,
    pub mean_b: f64,
    pub sd_b: f64,
    pub tw1_mean: f64,
    pub tw1_sd: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Two-sample KS comparison of the rescaled largest-eigenvalue statistics
/// of two batches built on the same model.
pub fn universality_report(
    a: &EnsembleBatch,
    b: &EnsembleBatch,
) -> Result<(TestResult, UniversalitySummary)> {
    if a.model_hash != b.model_hash {
        return Err(Error::ModelMismatch(format!(
            "{} vs {}",
            a.model_hash, b.model_hash
        )));
    }
    let ra = a.rescaled();
    let rb = b.rescaled();
    let test = ks_two_sample(&ra, &rb)?;
    let (mean_a, sd_a) = mean_sd(&ra);
    let (mean_b, sd_b) = mean_sd(&rb);
    let (tw1_mean, tw1_sd) = Tw1Table::embedded().mean_sd();
    Ok((
        test,
        UniversalitySummary {
            law_a: a.law_id.clone(),
            law_b: b.law_id.clone(),
            mean_a,
            sd_a,
            mean_b,
            sd_b,
            tw1_mean,
            tw1_sd,
        },
    ))
}

/// Optional eigenvector frames of the null covariances; identity when
/// absent. Columns must match the descending expanded spectra of the
/// model.
#[derive(Debug, Clone, Default)]
pub struct NullFrames {
    pub u: Option<DMatrix<f64>>,
    pub v: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectionReport {
    /// Rescaled test statistic `gamma0 N^{2/3} (lambda1 - lambda_+)` of the
    /// whitened data against the identity-covariance null.
    pub statistic: f64,
    pub lambda1: f64,
    pub p_monte_carlo: Option<f64>,
    pub p_tw1: f64,
    pub calibration_reps: usize,
    pub level: f64,
    pub reject: bool,
    /// Set when no Monte Carlo calibration ran and the decision fell back
    /// to the asymptotic table.
    pub approximate: bool,
    pub null_lambda_plus: f64,
    pub null_gamma0: f64,
    pub model_hash: String,
}

fn apply_whitening(
    data: &DMatrix<f64>,
    sigma: &[f64],
    frame: Option<&DMatrix<f64>>,
    left: bool,
) -> Result<DMatrix<f64>> {
    let dim = sigma.len();
    for (k, &s) in sigma.iter().enumerate() {
        if s <= 0.0 {
            return Err(Error::SingularCovariance(format!(
                "null spectrum has nonpositive value {s} at coordinate {k}"
            )));
        }
    }
    let inv_root = DMatrix::<f64>::from_diagonal(&nalgebra::DVector::from_iterator(
        dim,
        sigma.iter().map(|s| 1.0 / s.sqrt()),
    ));
    let half = match frame {
        Some(q) => {
            if q.nrows() != dim || q.ncols() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "frame is {}x{}, expected {dim}x{dim}",
                    q.nrows(),
                    q.ncols()
                )));
            }
            q * inv_root * q.transpose()
        }
        None => inv_root,
    };
    Ok(if left { &half * data } else { data * &half })
}

/// Tests for the presence of any signal on top of a known separable null
/// covariance: whitens the data, rescales the leading eigenvalue by the
/// identity-model edge law, and calibrates the p-value with seeded
/// Gaussian nulls (plus the asymptotic table as a cross reference).
pub fn detect_signal(
    data: &DMatrix<f64>,
    null_model: &SpectralModel,
    frames: &NullFrames,
    reps: usize,
    seed: u64,
    level: f64,
) -> Result<DetectionReport> {
    let n = null_model.n();
    let big_n = null_model.big_n();
    if null_model.swapped() {
        return Err(Error::DimensionMismatch(
            "null model was built with n > N; orient the data so rows <= columns".into(),
        ));
    }
    if data.nrows() != n || data.ncols() != big_n {
        return Err(Error::DimensionMismatch(format!(
            "data is {}x{}, null model is {n}x{big_n}",
            data.nrows(),
            data.ncols()
        )));
    }
    let whitened = apply_whitening(
        &apply_whitening(data, &null_model.expanded_sigma_a(), frames.u.as_ref(), true)?,
        &null_model.expanded_sigma_b(),
        frames.v.as_ref(),
        false,
    )?;

    let lambda1 = largest_sq_singular(&whitened) / big_n as f64;
    let identity = SpectralModel::null_mp(n, big_n)?;
    let edge = find_rightmost_edge(&identity, 0.05)?;
    let statistic = rescale_stat(lambda1, &edge, big_n);
    let p_tw1 = 1.0 - tw1_cdf(statistic);

    let p_monte_carlo = if reps > 0 {
        let exceed: usize = (0..reps)
            .into_par_iter()
            .map(|i| {
                let mut rng = derive_rng(derive_seed(seed, i as u64), "detect-null", 0);
                let z = DMatrix::<f64>::from_fn(n, big_n, |_, _| rng.sample(StandardNormal));
                let null_lambda1 = largest_sq_singular(&z) / big_n as f64;
                let t = rescale_stat(null_lambda1, &edge, big_n);
                usize::from(t >= statistic)
            })
            .sum();
        Some((1 + exceed) as f64 / (reps + 1) as f64)
    } else {
        None
    };

    let reject = match p_monte_carlo {
        Some(p) => p <= level,
        None => p_tw1 <= level,
    };
    Ok(DetectionReport {
        statistic,
        lambda1,
        p_monte_carlo,
        p_tw1,
        calibration_reps: reps,
        level,
        reject,
        approximate: p_monte_carlo.is_none(),
        null_lambda_plus: edge.lambda_plus,
        null_gamma0: edge.gamma0,
        model_hash: null_model.hash(),
    })
}

fn largest_sq_singular(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let s1 = sv.max();
    s1 * s1
}
