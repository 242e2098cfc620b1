//! Solver for the coupled self-consistent equations defining the
//! deterministic spectral law: the pair `(m1c, m2c)`, the Stieltjes
//! transform `mc`, density curves by inversion at small `eta`, and an
//! independent vector-equation cross check.

use crate::error::{Error, Result};
use crate::model::{ComplexPoint, SpectralModel};
use num_complex::Complex64;
use serde::Serialize;

/// Iteration controls. The defaults solve every built-in model; near-edge
/// work at very small `eta` may need a larger `max_iter` since the fixed
/// point loses contractivity like `sqrt(kappa + eta)` there.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Relative residual target.
    pub tol: f64,
    /// Iteration budget per continuation level.
    pub max_iter: usize,
    /// Initial damping factor in (0, 1]; adapted during iteration from a
    /// running estimate of the fixed-point map's derivative.
    pub damping: f64,
    /// Explicit descending continuation ladder; `None` builds a geometric
    /// ladder from 1 down to the target imaginary part.
    pub continuation_etas: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            damping: 1.0,
            continuation_etas: None,
        }
    }
}

impl SolverConfig {
    /// Same tolerances with a budget sized for near-edge small-eta solves.
    pub fn deep_edge() -> Self {
        Self {
            max_iter: 400_000,
            ..Self::default()
        }
    }

    fn ladder(&self, target_eta: f64) -> Vec<f64> {
        if let Some(levels) = &self.continuation_etas {
            let mut ladder: Vec<f64> = levels.iter().copied().filter(|&e| e > target_eta).collect();
            ladder.push(target_eta);
            return ladder;
        }
        let mut ladder = Vec::new();
        let mut eta = 1.0;
        while eta > 2.0 * target_eta {
            ladder.push(eta);
            eta *= 0.5;
        }
        ladder.push(target_eta);
        ladder
    }
}

/// Converged solution of the pair equations at one spectral point.
#[derive(Debug, Clone, Serialize)]
pub struct DysonSolution {
    pub z: ComplexPoint,
    pub m1c: Complex64,
    pub m2c: Complex64,
    pub mc: Complex64,
    pub iterations: usize,
    pub residual: f64,
}

fn rel(err: f64, scale: Complex64) -> f64 {
    err / (1.0 + scale.norm())
}

/// Adapts the damping factor from a running estimate of the iteration
/// map's local derivative `g`: the damped eigenvalue is `1 - s(1 - g)`, so
/// `s* = Re(1-g)/|1-g|^2` minimizes its modulus. Near-neutral alternating
/// modes (`g ~ -1`, the marginal bulk) get `s ~ 1/2` while slow edge modes
/// (`g ~ +1`) keep full steps, which a residual-only rule cannot tell
/// apart.
struct AdaptiveDamping {
    s: f64,
    prev: Option<(Complex64, Complex64)>,
}

impl AdaptiveDamping {
    const MIN: f64 = 1.0 / 16.0;

    fn new(initial: f64) -> Self {
        Self {
            s: initial.clamp(Self::MIN, 1.0),
            prev: None,
        }
    }

    /// Updates and returns the damping, given the current iterate and the
    /// raw (undamped) map target.
    fn step(&mut self, iterate: Complex64, target: Complex64) -> f64 {
        if let Some((p_it, p_tg)) = self.prev {
            let dm = iterate - p_it;
            let dc = target - p_tg;
            if dm.norm() > 1e-290 {
                let g = dc / dm;
                if g.norm() < 100.0 {
                    let one_minus = Complex64::new(1.0, 0.0) - g;
                    let denom = one_minus.norm_sqr();
                    let s_opt = if denom > 1e-12 {
                        (one_minus.re / denom).clamp(Self::MIN, 1.0)
                    } else {
                        1.0
                    };
                    self.s = 0.7 * self.s + 0.3 * s_opt;
                }
            }
        }
        self.prev = Some((iterate, target));
        self.s
    }
}

/// One damped Gauss-Seidel pass over the pair equations at fixed `z`,
/// starting from `m2_init`. Returns `(m1, m2, iterations)` on convergence.
fn iterate_level(
    model: &SpectralModel,
    z: Complex64,
    m2_init: Complex64,
    cfg: &SolverConfig,
) -> std::result::Result<(Complex64, Complex64, usize), (Complex64, Complex64, f64, usize)> {
    let neg_inv_z = -Complex64::new(1.0, 0.0) / z;
    let d = model.d();
    let f1 = |m2: Complex64| -> Result<Complex64> {
        Ok(d * neg_inv_z * model.pi_a().kernel_integral(m2)?)
    };
    let f2 = |m1: Complex64| -> Result<Complex64> {
        Ok(neg_inv_z * model.pi_b().kernel_integral(m1)?)
    };

    let mut m2 = m2_init;
    let mut m1 = match f1(m2) {
        Ok(v) => v,
        Err(_) => return Err((Complex64::default(), m2, f64::INFINITY, 0)),
    };
    let mut damping = AdaptiveDamping::new(cfg.damping);
    let mut last_residual = f64::INFINITY;

    for iter in 1..=cfg.max_iter {
        let step = |s: f64| -> Result<(Complex64, Complex64, Complex64, f64)> {
            let m1_new = f1(m2)?;
            let m2_cand = f2(m1_new)?;
            let m2_new = m2 + s * (m2_cand - m2);
            let r1 = rel((m1_new - f1(m2_new)?).norm(), m1_new);
            let r2 = rel((m2_new - f2(m1_new)?).norm(), m2_new);
            Ok((m1_new, m2_new, m2_cand, r1.max(r2)))
        };
        let s = damping.s;
        match step(s) {
            Ok((m1_new, m2_new, m2_cand, residual)) => {
                damping.step(m2, m2_cand);
                m1 = m1_new;
                m2 = m2_new;
                last_residual = residual;
                if residual <= cfg.tol {
                    return Ok((m1, m2, iter));
                }
            }
            Err(_) => {
                // Pole collision mid-iteration: nudge the iterate off the
                // real axis and continue.
                m2 += Complex64::new(0.0, 1e-8);
            }
        }
    }
    Err((m1, m2, last_residual, cfg.max_iter))
}

fn mc_from(model: &SpectralModel, z: Complex64, m2: Complex64) -> Result<Complex64> {
    Ok(-model.pi_a().unit_integral(m2)? / z)
}

/// Solves the pair equations at `z` with eta-continuation warm starts.
pub fn solve_at(model: &SpectralModel, z: ComplexPoint, cfg: &SolverConfig) -> Result<DysonSolution> {
    solve_at_warm(model, z, None, cfg)
}

/// Like [`solve_at`] but optionally seeded with a nearby solution's `m2c`.
/// The warm start is attempted directly at the target eta; on failure the
/// full continuation ladder runs.
pub fn solve_at_warm(
    model: &SpectralModel,
    z: ComplexPoint,
    warm_m2: Option<Complex64>,
    cfg: &SolverConfig,
) -> Result<DysonSolution> {
    if let Some(init) = warm_m2 {
        if let Ok((m1, m2, iters)) = iterate_level(model, z.z(), init, cfg) {
            return finish(model, z, m1, m2, iters, cfg);
        }
    }
    let ladder = cfg.ladder(z.eta());
    let mut m2 = -Complex64::new(1.0, 0.0) / Complex64::new(z.e(), ladder[0]);
    let mut total_iters = 0usize;
    let last = ladder.len() - 1;
    for (level, &eta) in ladder.iter().enumerate() {
        let zl = Complex64::new(z.e(), eta);
        match iterate_level(model, zl, m2, cfg) {
            Ok((m1, m2_new, iters)) => {
                total_iters += iters;
                m2 = m2_new;
                if level == last {
                    return finish(model, z, m1, m2, total_iters, cfg);
                }
            }
            Err((m1, m2_new, residual, iters)) => {
                total_iters += iters;
                if level == last {
                    return Err(Error::Convergence {
                        residual,
                        iterations: total_iters,
                        eta,
                        m1c: (m1.re, m1.im),
                        m2c: (m2_new.re, m2_new.im),
                    });
                }
                // Intermediate levels may stall without dooming the solve;
                // carry the best iterate downward.
                m2 = m2_new;
            }
        }
    }
    unreachable!("ladder is nonempty")
}

fn finish(
    model: &SpectralModel,
    z: ComplexPoint,
    m1: Complex64,
    m2: Complex64,
    iterations: usize,
    cfg: &SolverConfig,
) -> Result<DysonSolution> {
    let zc = z.z();
    let mc = mc_from(model, zc, m2)?;
    let d = model.d();
    let r1 = rel(
        (m1 - d * (-1.0 / zc) * model.pi_a().kernel_integral(m2)?).norm(),
        m1,
    );
    let r2 = rel(
        (m2 - (-1.0 / zc) * model.pi_b().kernel_integral(m1)?).norm(),
        m2,
    );
    let residual = r1.max(r2);
    if residual > cfg.tol {
        return Err(Error::Convergence {
            residual,
            iterations,
            eta: z.eta(),
            m1c: (m1.re, m1.im),
            m2c: (m2.re, m2.im),
        });
    }
    Ok(DysonSolution {
        z,
        m1c: m1,
        m2c: m2,
        mc,
        iterations,
        residual,
    })
}

/// Spectral densities along a uniform energy grid, recovered from the
/// imaginary parts at fixed small `eta`.
#[derive(Debug, Clone, Serialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub rho_c: Vec<f64>,
    pub rho_1c: Vec<f64>,
    pub rho_2c: Vec<f64>,
    pub eta_used: f64,
    /// Grid points whose solve failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

impl DensityCurve {
    /// CSV with header `E,rho_c,rho_1c,rho_2c`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "E,rho_c,rho_1c,rho_2c")?;
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{},{},{},{}",
                self.grid[i], self.rho_c[i], self.rho_1c[i], self.rho_2c[i]
            )?;
        }
        Ok(())
    }
}

fn clip_density(im_over_pi: f64) -> f64 {
    if im_over_pi < 0.0 && im_over_pi > -1e-10 {
        0.0
    } else {
        im_over_pi
    }
}

/// Sweeps `[e_min, e_max]` left to right at fixed `eta`, warm-starting each
/// point from its neighbor. Failed points are annotated, not fatal.
pub fn density_grid(
    model: &SpectralModel,
    e_min: f64,
    e_max: f64,
    eta: f64,
    points: usize,
    cfg: &SolverConfig,
) -> Result<DensityCurve> {
    if !(e_min < e_max) {
        return Err(Error::EdgeSearch(format!(
            "empty energy window [{e_min}, {e_max}]"
        )));
    }
    if !(eta > 0.0) {
        return Err(Error::NonPositiveEta(eta));
    }
    if points < 2 {
        return Err(Error::EdgeSearch("density grid needs >= 2 points".into()));
    }
    let step = (e_max - e_min) / (points - 1) as f64;
    let mut curve = DensityCurve {
        grid: Vec::with_capacity(points),
        rho_c: Vec::with_capacity(points),
        rho_1c: Vec::with_capacity(points),
        rho_2c: Vec::with_capacity(points),
        eta_used: eta,
        failures: Vec::new(),
    };
    let mut warm: Option<Complex64> = None;
    for k in 0..points {
        let e = e_min + step * k as f64;
        let point = ComplexPoint::new(e, eta)?;
        match solve_at_warm(model, point, warm, cfg) {
            Ok(sol) => {
                warm = Some(sol.m2c);
                curve.grid.push(e);
                curve.rho_c.push(clip_density(sol.mc.im / std::f64::consts::PI));
                curve
                    .rho_1c
                    .push(clip_density(sol.m1c.im / std::f64::consts::PI));
                curve
                    .rho_2c
                    .push(clip_density(sol.m2c.im / std::f64::consts::PI));
            }
            Err(err) => {
                warm = None;
                curve.grid.push(e);
                curve.rho_c.push(f64::NAN);
                curve.rho_1c.push(f64::NAN);
                curve.rho_2c.push(f64::NAN);
                curve.failures.push((k, err.to_string()));
            }
        }
    }
    Ok(curve)
}

/// Solves the per-atom reduction of the vector self-consistent equation
/// `1/v = -z + S * 1/(1 + S^T v)` and returns the maximum discrepancy of the
/// reconstructed `(m1c, m2c, mc)` against [`solve_at`].
///
/// The vector iteration never consults the pair solver, so agreement is a
/// genuine two-route check.
pub fn vector_dyson_check(
    model: &SpectralModel,
    z: ComplexPoint,
    cfg: &SolverConfig,
) -> Result<f64> {
    let pair = solve_at(model, z, cfg)?;
    let atoms = model.pi_a().atoms();
    let d = model.d();

    let m1_of = |v: &[Complex64]| -> Complex64 {
        d * atoms
            .iter()
            .zip(v)
            .map(|(a, vi)| a.weight * a.value * vi)
            .sum::<Complex64>()
    };

    let ladder = cfg.ladder(z.eta());
    let mut v: Vec<Complex64> =
        vec![-Complex64::new(1.0, 0.0) / Complex64::new(z.e(), ladder[0]); atoms.len()];
    let last = ladder.len() - 1;
    for (level, &eta) in ladder.iter().enumerate() {
        let zl = Complex64::new(z.e(), eta);
        let mut damping = AdaptiveDamping::new(cfg.damping);
        let mut last_residual = f64::INFINITY;
        let mut converged = false;
        for _ in 0..cfg.max_iter {
            let m1 = m1_of(&v);
            let coupling = match model.pi_b().kernel_integral(m1) {
                Ok(k) => k,
                Err(_) => {
                    for vi in &mut v {
                        *vi += Complex64::new(0.0, 1e-8);
                    }
                    continue;
                }
            };
            let targets: Vec<Complex64> = atoms
                .iter()
                .map(|atom| 1.0 / (-zl + atom.value * coupling))
                .collect();
            // Track the dominant mode through the weighted trace m1.
            let m1_target = d
                * atoms
                    .iter()
                    .zip(&targets)
                    .map(|(a, t)| a.weight * a.value * t)
                    .sum::<Complex64>();
            let s = damping.step(m1, m1_target);
            for (vi, target) in v.iter_mut().zip(&targets) {
                *vi += s * (*target - *vi);
            }
            // Equation residual at the updated vector.
            let coupling_new = match model.pi_b().kernel_integral(m1_of(&v)) {
                Ok(k) => k,
                Err(_) => continue,
            };
            let mut residual = 0.0f64;
            for (atom, vi) in atoms.iter().zip(&v) {
                let target = 1.0 / (-zl + atom.value * coupling_new);
                residual = residual.max(rel((*vi - target).norm(), *vi));
            }
            last_residual = residual;
            if residual <= cfg.tol {
                converged = true;
                break;
            }
        }
        if level == last && !converged {
            return Err(Error::Convergence {
                residual: last_residual,
                iterations: cfg.max_iter,
                eta,
                m1c: (m1_of(&v).re, m1_of(&v).im),
                m2c: (0.0, 0.0),
            });
        }
    }

    let m1_v = m1_of(&v);
    let mc_v: Complex64 = atoms
        .iter()
        .zip(&v)
        .map(|(a, vi)| a.weight * vi)
        .sum::<Complex64>();
    let m2_v = -model.pi_b().kernel_integral(m1_v)? / z.z();

    let disc = (m1_v - pair.m1c)
        .norm()
        .max((m2_v - pair.m2c).norm())
        .max((mc_v - pair.mc).norm());
    Ok(disc)
}
