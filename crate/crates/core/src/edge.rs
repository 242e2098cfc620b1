//! Locates the spectral support and its rightmost edge through the
//! critical-point equations `f = 0`, `df/dalpha = 0`, checks edge
//! regularity, and derives the rescaling constant `gamma0`, the square-root
//! density coefficient, classical eigenvalue locations, and the counting
//! function.

use crate::dyson::{solve_at_warm, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{ComplexPoint, SpectralModel, POLE_THRESHOLD};
use num_complex::Complex64;
use serde::Serialize;

/// The defining function and its partial derivatives at real `(x, alpha)`,
/// evaluated by closed-form atomic sums.
#[derive(Debug, Clone, Copy)]
pub struct FDerivatives {
    pub f: f64,
    pub df_dalpha: f64,
    pub df_dz: f64,
    pub d2f_dalpha2: f64,
}

/// Evaluates `f(x, alpha) = -alpha + int s / (-x (1 + s g)) dpi_B` with
/// `g = d * int t / (-x (1 + t alpha)) dpi_A`, together with `df/dz`,
/// `df/dalpha` and `d^2f/dalpha^2`.
pub fn f_and_derivatives(model: &SpectralModel, x: f64, alpha: f64) -> Result<FDerivatives> {
    if x.abs() < POLE_THRESHOLD {
        return Err(Error::SingularKernel {
            atom: 0.0,
            dist: x.abs(),
        });
    }
    let d = model.d();
    let mut g = 0.0;
    let mut dg = 0.0;
    let mut d2g = 0.0;
    for atom in model.pi_a().atoms() {
        let t = atom.value;
        let w = atom.weight;
        let denom = 1.0 + t * alpha;
        if denom.abs() < POLE_THRESHOLD {
            return Err(Error::SingularKernel {
                atom: t,
                dist: denom.abs(),
            });
        }
        g += w * t / denom;
        dg += w * t * t / (denom * denom);
        d2g += w * t * t * t / (denom * denom * denom);
    }
    g *= -d / x;
    dg *= d / x;
    d2g *= -2.0 * d / x;

    let mut f = -alpha;
    let mut df_dz = 0.0;
    let mut df_da = -1.0;
    let mut d2f_da2 = 0.0;
    for atom in model.pi_b().atoms() {
        let s = atom.value;
        let w = atom.weight;
        let denom = 1.0 + s * g;
        if denom.abs() < POLE_THRESHOLD {
            return Err(Error::SingularKernel {
                atom: s,
                dist: denom.abs(),
            });
        }
        let d2 = denom * denom;
        f += w * s / (-x * denom);
        df_dz += w * s / (x * x * d2);
        df_da += w * s * s * dg / (x * d2);
        d2f_da2 += w
            * (-2.0 * s * s * s * dg * dg / (x * d2 * denom) + s * s * d2g / (x * d2));
    }
    Ok(FDerivatives {
        f,
        df_dalpha: df_da,
        df_dz,
        d2f_dalpha2: d2f_da2,
    })
}

/// Root of `f(., alpha) = 0` inside `bracket`, by bisection with a final
/// Newton polish through `df/dz`.
pub fn z_of_alpha(model: &SpectralModel, alpha: f64, bracket: (f64, f64)) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    if !(lo < hi) {
        return Err(Error::NoBracket { lo, hi });
    }
    let eval = |x: f64| f_and_derivatives(model, x, alpha).map(|d| d.f);
    let flo = eval(lo)?;
    let fhi = eval(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoBracket { lo, hi });
    }
    let (mut flo, mut _fhi) = (flo, fhi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = eval(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
            _fhi = fm;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..4 {
        let der = f_and_derivatives(model, x, alpha)?;
        if der.df_dz.abs() < 1e-300 {
            break;
        }
        let step = der.f / der.df_dz;
        let next = x - step;
        if next <= lo || next >= hi {
            break;
        }
        x = next;
        if step.abs() <= 1e-16 * (1.0 + x.abs()) {
            break;
        }
    }
    let check = f_and_derivatives(model, x, alpha)?;
    if check.f.abs() > 1e-12 * (1.0 + x.abs()) {
        return Err(Error::EdgeSearch(format!(
            "root polish stalled at |f| = {:.3e} for alpha = {alpha}",
            check.f.abs()
        )));
    }
    Ok(x)
}

/// `D(alpha) = d * int t/(1+t*alpha) dpi_A`; the real-z poles of the outer
/// integrand sit at `s * D(alpha)` for atoms `s` of `pi_B`.
fn coupling_d(model: &SpectralModel, alpha: f64) -> Result<f64> {
    Ok(model.d() * model.pi_a().kernel_integral_real(alpha)?)
}

/// Root of `f(., alpha) = 0` on the branch right of every pole.
fn rightmost_branch_z(model: &SpectralModel, alpha: f64) -> Result<f64> {
    if alpha >= 0.0 {
        return Err(Error::EdgeSearch(format!(
            "rightmost branch needs alpha < 0, got {alpha}"
        )));
    }
    let d_val = coupling_d(model, alpha)?;
    let q_max = model
        .pi_b()
        .atoms()
        .iter()
        .filter(|a| a.value > 0.0)
        .map(|a| a.value * d_val)
        .fold(f64::NEG_INFINITY, f64::max);
    if !q_max.is_finite() {
        return Err(Error::EdgeSearch(
            "B-side measure has no positive atoms".into(),
        ));
    }
    let scale = 1.0 + q_max.abs();
    let mut lo = q_max + 1e-9 * scale;
    // f -> -inf at the pole and -> -alpha > 0 at +infinity.
    let mut flo = f_and_derivatives(model, lo, alpha)?.f;
    let mut shrink = 0;
    while flo >= 0.0 && shrink < 40 {
        lo = q_max + (lo - q_max) / 8.0;
        flo = f_and_derivatives(model, lo, alpha)?.f;
        shrink += 1;
    }
    if flo >= 0.0 {
        return Err(Error::EdgeSearch(format!(
            "no pole-side bracket for alpha = {alpha}"
        )));
    }
    let mut hi = q_max + scale;
    let mut grow = 0;
    while f_and_derivatives(model, hi, alpha)?.f <= 0.0 && grow < 200 {
        hi = q_max + (hi - q_max) * 4.0;
        grow += 1;
    }
    z_of_alpha(model, alpha, (lo, hi))
}

/// Root on the interior z-branch between poles `q[j]` and `q[j+1]`.
fn interior_branch_z(model: &SpectralModel, alpha: f64, q: &[f64], j: usize) -> Result<f64> {
    let gap = q[j + 1] - q[j];
    if gap <= 0.0 {
        return Err(Error::NoBracket { lo: q[j], hi: q[j + 1] });
    }
    let delta = 1e-9 * gap;
    z_of_alpha(model, alpha, (q[j] + delta, q[j + 1] - delta))
}

#[derive(Debug, Clone, Copy)]
struct Critical {
    alpha: f64,
    z: f64,
}

/// Scans one alpha window against one z-branch and refines every sign
/// change of `df/dalpha` along it by bisection.
fn scan_branch(
    model: &SpectralModel,
    alphas: &[f64],
    root_of: &dyn Fn(&SpectralModel, f64) -> Result<f64>,
    out: &mut Vec<Critical>,
    warnings: &mut Vec<String>,
) {
    let h_at = |alpha: f64| -> Option<(f64, f64)> {
        let z = root_of(model, alpha).ok()?;
        let der = f_and_derivatives(model, z, alpha).ok()?;
        Some((der.df_dalpha, z))
    };
    let mut prev: Option<(f64, f64, f64)> = None;
    for &alpha in alphas {
        let Some((h, z)) = h_at(alpha) else {
            prev = None;
            continue;
        };
        if let Some((pa, ph, _pz)) = prev {
            if ph.signum() != h.signum() && ph != 0.0 && h != 0.0 {
                let (mut lo, mut hi, mut hlo) = (pa, alpha, ph);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid == lo || mid == hi {
                        break;
                    }
                    match h_at(mid) {
                        Some((hm, _)) if hm == 0.0 => {
                            lo = mid;
                            hi = mid;
                            break;
                        }
                        Some((hm, _)) => {
                            if hm.signum() == hlo.signum() {
                                lo = mid;
                                hlo = hm;
                            } else {
                                hi = mid;
                            }
                        }
                        None => break,
                    }
                }
                let alpha_c = 0.5 * (lo + hi);
                match h_at(alpha_c) {
                    Some((hc, zc)) => {
                        let fc = f_and_derivatives(model, zc, alpha_c)
                            .map(|d| d.f.abs())
                            .unwrap_or(f64::INFINITY);
                        if hc.abs() <= 1e-8 && fc <= 1e-8 * (1.0 + zc.abs()) {
                            out.push(Critical { alpha: alpha_c, z: zc });
                        } else {
                            warnings.push(format!(
                                "discarded critical candidate at alpha = {alpha_c:.6e}: \
                                 |df/dalpha| = {:.3e}, |f| = {fc:.3e}",
                                hc.abs()
                            ));
                        }
                    }
                    None => warnings.push(format!(
                        "lost branch while refining near alpha = {:.6e}",
                        0.5 * (lo + hi)
                    )),
                }
            }
        }
        prev = Some((alpha, h, z));
    }
}

const BRANCH_POINTS: usize = 512;

/// All real critical pairs `(alpha, z)` of the edge equations, enumerated
/// over the alpha windows between kernel poles and every z-branch.
fn edge_candidates(model: &SpectralModel) -> Result<(Vec<Critical>, Vec<String>)> {
    let mut poles: Vec<f64> = model
        .pi_a()
        .atoms()
        .iter()
        .filter(|a| a.value > 0.0)
        .map(|a| -1.0 / a.value)
        .collect();
    if poles.is_empty() {
        return Err(Error::EdgeSearch(
            "A-side measure has no positive atoms".into(),
        ));
    }
    poles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    poles.dedup();

    let mut windows: Vec<Vec<f64>> = Vec::new();
    // Unbounded window left of every pole, log-spaced.
    let first = poles[0];
    let span = 1.0 + first.abs();
    let (s_min, s_max) = (1e-9 * span, 100.0 * span);
    let ratio = (s_max / s_min).powf(1.0 / (BRANCH_POINTS - 1) as f64);
    windows.push(
        (0..BRANCH_POINTS)
            .map(|k| first - s_min * ratio.powi(k as i32))
            .collect(),
    );
    // Bounded windows between consecutive poles.
    for pair in poles.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        let eps = 1e-9 * (hi - lo);
        let step = (hi - lo - 2.0 * eps) / (BRANCH_POINTS - 1) as f64;
        windows.push((0..BRANCH_POINTS).map(|k| lo + eps + step * k as f64).collect());
    }
    // Window between the last pole and zero.
    let last = *poles.last().unwrap();
    let eps = 1e-9 * last.abs();
    let step = (-last - 2.0 * eps) / (BRANCH_POINTS - 1) as f64;
    windows.push((0..BRANCH_POINTS).map(|k| last + eps + step * k as f64).collect());

    let b_atoms: Vec<f64> = model
        .pi_b()
        .atoms()
        .iter()
        .filter(|a| a.value > 0.0)
        .map(|a| a.value)
        .collect();
    let n_interior = b_atoms.len().saturating_sub(1);

    let mut criticals = Vec::new();
    let mut warnings = Vec::new();
    for alphas in &windows {
        scan_branch(model, alphas, &rightmost_branch_z, &mut criticals, &mut warnings);
        for j in 0..n_interior {
            let atoms = b_atoms.clone();
            let root = move |m: &SpectralModel, a: f64| -> Result<f64> {
                let d_val = coupling_d(m, a)?;
                if d_val.abs() < 1e-13 {
                    return Err(Error::EdgeSearch("pole collapse at D ~ 0".into()));
                }
                let mut q: Vec<f64> = atoms.iter().map(|s| s * d_val).collect();
                q.sort_by(|a, b| a.partial_cmp(b).unwrap());
                interior_branch_z(m, a, &q, j)
            };
            scan_branch(model, alphas, &root, &mut criticals, &mut warnings);
        }
    }

    // Merge duplicates found from adjacent scans.
    criticals.sort_by(|a, b| a.z.partial_cmp(&b.z).unwrap());
    let mut merged: Vec<Critical> = Vec::new();
    for c in criticals {
        match merged.last() {
            Some(last)
                if (c.z - last.z).abs() <= 1e-8 * (1.0 + c.z.abs())
                    && (c.alpha - last.alpha).abs() <= 1e-6 * (1.0 + c.alpha.abs()) =>
            {
                ()
            }
            _ => merged.push(c),
        }
    }
    Ok((merged, warnings))
}

/// Support of the spectral densities as a union of disjoint intervals.
#[derive(Debug, Clone, Serialize)]
pub struct SupportResult {
    /// Disjoint intervals, sorted left to right.
    pub intervals: Vec<(f64, f64)>,
    /// Flags for discarded or unpaired critical candidates; exactness is
    /// only guaranteed for the rightmost interval.
    pub warnings: Vec<String>,
}

/// Enumerates critical values and pairs them into support intervals on
/// `(0, inf)`. An odd count means the leftmost band closes at the hard edge
/// zero.
pub fn find_support(model: &SpectralModel) -> Result<SupportResult> {
    let (criticals, warnings) = edge_candidates(model)?;
    Ok(pair_support(model, criticals, warnings))
}

fn pair_support(
    _model: &SpectralModel,
    criticals: Vec<Critical>,
    mut warnings: Vec<String>,
) -> SupportResult {
    let mut values: Vec<f64> = criticals.iter().map(|c| c.z).filter(|&z| z > 0.0).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut intervals = Vec::new();
    let mut idx = values.len();
    while idx >= 2 {
        intervals.push((values[idx - 2], values[idx - 1]));
        idx -= 2;
    }
    if idx == 1 {
        intervals.push((0.0, values[0]));
        if values.len() > 1 {
            warnings.push(format!(
                "odd critical-point count {}; leftmost band closed at the hard edge",
                values.len()
            ));
        }
    }
    intervals.reverse();
    SupportResult { intervals, warnings }
}

/// The six scalar integrals entering the cube of the rescaling constant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IkJk {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
}

/// Everything known about the rightmost edge of the spectral law.
#[derive(Debug, Clone, Serialize)]
pub struct EdgeReport {
    pub lambda_plus: f64,
    /// `m2c(lambda_+)`.
    pub alpha_star: f64,
    /// `m1c(lambda_+)`.
    pub m1c_edge: f64,
    pub gamma0: f64,
    /// Coefficient `a2` in `rho_2c(lambda_+ - x) ~ a2 sqrt(x)`.
    pub sqrt_coeff_2c: f64,
    pub support: Vec<(f64, f64)>,
    pub gap_margin_a: f64,
    pub gap_margin_b: f64,
    pub ik_jk: IkJk,
    pub regular: bool,
    pub tau: f64,
    pub model_hash: String,
    pub warnings: Vec<String>,
}

fn ik_jk_at(model: &SpectralModel, lambda: f64, alpha_star: f64, m1c_edge: f64) -> IkJk {
    let d = model.d();
    let mut i1 = 0.0;
    let mut i2 = 0.0;
    let mut i3 = 0.0;
    for atom in model.pi_a().atoms() {
        let t = atom.value;
        let w = atom.weight;
        let denom = 1.0 + t * alpha_star;
        i1 += w * t / (lambda * denom * denom);
        i2 += d * w * t * t / (lambda * denom * denom);
        i3 += d * w * t * t * t / (lambda * denom * denom * denom);
    }
    let mut j1 = 0.0;
    let mut j2 = 0.0;
    let mut j3 = 0.0;
    for atom in model.pi_b().atoms() {
        let s = atom.value;
        let w = atom.weight;
        let denom = 1.0 + s * m1c_edge;
        j1 += w * s / (lambda * lambda * denom * denom);
        j2 += w * s * s / (lambda * denom * denom);
        j3 += w * s * s * s / (lambda * denom * denom * denom);
    }
    IkJk { i1, i2, i3, j1, j2, j3 }
}

/// The cube-root rescaling constant, from the six edge integrals:
/// `gamma0^3 = I1^2 J1 / (I2^2 J3 + I3 J2)`.
pub fn scaling_constant(model: &SpectralModel, edge: &EdgeReport) -> Result<f64> {
    let ik = ik_jk_at(model, edge.lambda_plus, edge.alpha_star, edge.m1c_edge);
    let denom = ik.i2 * ik.i2 * ik.j3 + ik.i3 * ik.j2;
    let cube = ik.i1 * ik.i1 * ik.j1 / denom;
    if !(cube > 0.0) || !cube.is_finite() {
        return Err(Error::DegenerateEdge(format!(
            "gamma0^3 = {cube} is not positive"
        )));
    }
    Ok(cube.cbrt())
}

/// Coefficient of the square-root vanishing of `rho_2c` at the edge:
/// `a2 = (1/pi) sqrt(2 df/dz / (-d2f/dalpha2))` at `(lambda_+, alpha_*)`.
pub fn sqrt_coefficient(model: &SpectralModel, edge: &EdgeReport) -> Result<f64> {
    let der = f_and_derivatives(model, edge.lambda_plus, edge.alpha_star)?;
    if der.d2f_dalpha2 >= -1e-12 {
        return Err(Error::DegenerateEdge(format!(
            "d2f/dalpha2 = {:.3e} is not negative",
            der.d2f_dalpha2
        )));
    }
    Ok((2.0 * der.df_dz / -der.d2f_dalpha2).sqrt() / std::f64::consts::PI)
}

/// Locates the rightmost edge by scanning the branch
/// `alpha in (-1/sigma_1, 0)` for critical points of `z(alpha)`, then fills
/// regularity margins, `gamma0`, the square-root coefficient and the full
/// support.
pub fn find_rightmost_edge(model: &SpectralModel, tau: f64) -> Result<EdgeReport> {
    let validation = model.validate_structure(tau);
    if !validation.pass {
        return Err(Error::Validation(format!(
            "tau = {tau}: norm margin {:.3e}, zero-mass margin {:.3e}, ratio margin {:.3e}",
            validation.norm_margin, validation.zero_mass_margin, validation.ratio_margin
        )));
    }
    let (criticals, warnings) = edge_candidates(model)?;
    let best = criticals
        .iter()
        .filter(|c| c.z > 0.0)
        .cloned()
        .reduce(|a, b| if a.z >= b.z { a } else { b })
        .ok_or_else(|| {
            Error::EdgeSearch(format!(
                "no critical point found among {} candidates ({} warnings)",
                criticals.len(),
                warnings.len()
            ))
        })?;
    let lambda_plus = best.z;
    let alpha_star = best.alpha;
    // m1c(lambda_+) = g(lambda_+, alpha_*).
    let m1c_edge = -model.d() * model.pi_a().kernel_integral_real(alpha_star)? / lambda_plus;

    let gap_margin_a = model
        .pi_a()
        .atoms()
        .iter()
        .map(|a| 1.0 + alpha_star * a.value)
        .fold(f64::INFINITY, f64::min);
    let gap_margin_b = model
        .pi_b()
        .atoms()
        .iter()
        .map(|a| 1.0 + m1c_edge * a.value)
        .fold(f64::INFINITY, f64::min);
    let regular = gap_margin_a >= tau && gap_margin_b >= tau;

    let support = pair_support(model, criticals, warnings);
    let mut report = EdgeReport {
        lambda_plus,
        alpha_star,
        m1c_edge,
        gamma0: f64::NAN,
        sqrt_coeff_2c: f64::NAN,
        support: support.intervals,
        gap_margin_a,
        gap_margin_b,
        ik_jk: ik_jk_at(model, lambda_plus, alpha_star, m1c_edge),
        regular,
        tau,
        model_hash: model.hash(),
        warnings: support.warnings,
    };
    if regular {
        report.gamma0 = scaling_constant(model, &report)?;
        report.sqrt_coeff_2c = sqrt_coefficient(model, &report)?;
    }
    Ok(report)
}

/// Deterministic quantiles of the spectral density.
#[derive(Debug, Clone, Serialize)]
pub struct ClassicalLocations {
    /// `gammas[j-1]` is the classical location of the j-th eigenvalue;
    /// `gammas[0] = lambda_+` exactly.
    pub gammas: Vec<f64>,
}

impl ClassicalLocations {
    pub fn gamma(&self, j: usize) -> f64 {
        self.gammas[j - 1]
    }

    pub fn j_max(&self) -> usize {
        self.gammas.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RhoSel {
    C,
    Two,
}

/// Density value at `E + i eta` for the selected transform.
fn rho_value(
    model: &SpectralModel,
    e: f64,
    eta: f64,
    warm: Option<Complex64>,
    cfg: &SolverConfig,
    sel: RhoSel,
) -> Result<(f64, Complex64)> {
    let sol = solve_at_warm(model, ComplexPoint::new(e, eta)?, warm, cfg)?;
    let raw = match sel {
        RhoSel::C => sol.mc.im,
        RhoSel::Two => sol.m2c.im,
    } / std::f64::consts::PI;
    Ok((raw.max(0.0), sol.m2c))
}

/// Cumulative mass of one support interval `[a, b]`, accumulated from `b`
/// leftward down to `lo_clip`. Both interval ends get a square-root
/// substitution so the edge singularities integrate smoothly. Returns
/// `(table, total)` where `table` holds `(E, mass in [E, b])` with `E`
/// descending.
fn integrate_interval(
    model: &SpectralModel,
    a: f64,
    b: f64,
    lo_clip: f64,
    sel: RhoSel,
    eta: f64,
    nodes_per_half: usize,
    cfg: &SolverConfig,
) -> Result<(Vec<(f64, f64)>, f64)> {
    let lo = lo_clip.max(a);
    if lo >= b {
        return Ok((vec![], 0.0));
    }
    let mid = 0.5 * (a + b);
    let mut table: Vec<(f64, f64)> = vec![(b, 0.0)];
    let mut cum = 0.0;
    let mut warm: Option<Complex64> = None;

    // Right half: E = b - u^2, integrand 2 u rho(b - u^2).
    let right_lo = lo.max(mid);
    let u_end = (b - right_lo).sqrt();
    let segments = nodes_per_half.max(8) / 2;
    let du = u_end / segments as f64;
    let mut g_prev = 0.0; // 2u*rho at u = 0
    for k in 0..segments {
        let u0 = k as f64 * du;
        let u1 = u0 + 0.5 * du;
        let u2 = u0 + du;
        let (r1, w1) = rho_value(model, b - u1 * u1, eta, warm, cfg, sel)?;
        warm = Some(w1);
        let (r2, w2) = rho_value(model, b - u2 * u2, eta, warm, cfg, sel)?;
        warm = Some(w2);
        let g1 = 2.0 * u1 * r1;
        let g2 = 2.0 * u2 * r2;
        cum += du / 6.0 * (g_prev + 4.0 * g1 + g2);
        g_prev = g2;
        table.push((b - u2 * u2, cum));
    }

    // Left half: E = a + u^2 walked downward from the midpoint.
    if lo < mid {
        let u_hi = (mid - a).sqrt();
        let u_lo = (lo - a).max(0.0).sqrt();
        let du = (u_hi - u_lo) / segments as f64;
        let (r, w) = rho_value(model, a + u_hi * u_hi, eta, warm, cfg, sel)?;
        warm = Some(w);
        let mut g_prev = 2.0 * u_hi * r;
        for k in 0..segments {
            let u0 = u_hi - k as f64 * du;
            let u1 = u0 - 0.5 * du;
            let u2 = u0 - du;
            let (r1, w1) = rho_value(model, a + u1 * u1, eta, warm, cfg, sel)?;
            warm = Some(w1);
            let (r2, w2) = rho_value(model, a + u2 * u2, eta, warm, cfg, sel)?;
            warm = Some(w2);
            let g1 = 2.0 * u1 * r1;
            let g2 = 2.0 * u2 * r2;
            cum += du / 6.0 * (g_prev + 4.0 * g1 + g2);
            g_prev = g2;
            table.push((a + u2 * u2, cum));
        }
    }
    let total = cum;
    Ok((table, total))
}

fn quantile_cfg(cfg: &SolverConfig) -> SolverConfig {
    SolverConfig {
        max_iter: cfg.max_iter.max(400_000),
        ..cfg.clone()
    }
}

const QUANTILE_NODES_PER_HALF: usize = 1024;

/// Classical locations `gamma_j` for `j = 1..=j_max`, by cumulative
/// quadrature of `rho_c` from the rightmost edge leftward.
pub fn classical_locations(
    model: &SpectralModel,
    edge: &EdgeReport,
    j_max: usize,
    cfg: &SolverConfig,
) -> Result<ClassicalLocations> {
    if j_max == 0 || j_max > model.n() {
        return Err(Error::QuantileExhausted {
            requested: j_max as f64,
            available: model.n() as f64,
        });
    }
    let n = model.n() as f64;
    let eta = 1e-6 * edge.lambda_plus.max(1.0);
    let cfg = quantile_cfg(cfg);

    // Cumulative table over all support intervals, right to left.
    let mut table: Vec<(f64, f64)> = Vec::new();
    let mut offset = 0.0;
    for &(a, b) in edge.support.iter().rev() {
        let (part, total) =
            integrate_interval(model, a, b, f64::NEG_INFINITY, RhoSel::C, eta, QUANTILE_NODES_PER_HALF, &cfg)?;
        for (e, c) in part {
            table.push((e, offset + c));
        }
        offset += total;
    }

    let mut gammas = Vec::with_capacity(j_max);
    gammas.push(edge.lambda_plus);
    for j in 2..=j_max {
        let target = (j - 1) as f64 / n;
        if target >= offset {
            return Err(Error::QuantileExhausted {
                requested: target,
                available: offset,
            });
        }
        // First table entry with cumulative mass >= target.
        let pos = table.partition_point(|&(_, c)| c < target);
        let (e_hi, c_hi) = table[pos];
        let gamma = if pos == 0 {
            e_hi
        } else {
            let (e_lo, c_lo) = table[pos - 1];
            if c_hi > c_lo {
                e_lo + (e_hi - e_lo) * (target - c_lo) / (c_hi - c_lo)
            } else {
                e_hi
            }
        };
        // Quantiles of a positive density cannot increase with j.
        let prev = *gammas.last().unwrap();
        gammas.push(gamma.min(prev));
    }
    Ok(ClassicalLocations { gammas })
}

/// `n_c(E) = int_E^inf rho_2c`, zero at and beyond the rightmost edge.
pub fn counting_function(model: &SpectralModel, e: f64, cfg: &SolverConfig) -> Result<f64> {
    let support = find_support(model)?;
    let eta_scale = support
        .intervals
        .last()
        .map(|&(_, b)| b)
        .unwrap_or(1.0)
        .max(1.0);
    let eta = 1e-6 * eta_scale;
    let cfg = quantile_cfg(cfg);
    let mut total = 0.0;
    for &(a, b) in &support.intervals {
        if b <= e {
            continue;
        }
        let (_, part) =
            integrate_interval(model, a, b, e, RhoSel::Two, eta, QUANTILE_NODES_PER_HALF / 2, &cfg)?;
        total += part;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn null_mp_d(d_num: usize, d_den: usize) -> SpectralModel {
        SpectralModel::null_mp(100 * d_num, 100 * d_den).unwrap()
    }

    fn fig1() -> SpectralModel {
        SpectralModel::new(
            &[(1.0, 0.5), (4.0, 0.5)],
            &[(1.0, 0.5), (4.0, 0.5)],
            1000,
            2000,
        )
        .unwrap()
    }

    #[test]
    fn f_vanishes_at_mp_edge() {
        // Unit-ratio model: m2c(4) = -1/2 is the critical point.
        let model = null_mp_d(1, 1);
        let der = f_and_derivatives(&model, 4.0, -0.5).unwrap();
        assert!(der.f.abs() < 1e-14, "f = {}", der.f);
        assert!(der.df_dalpha.abs() < 1e-14, "df_da = {}", der.df_dalpha);
        assert_relative_eq!(der.df_dz, 0.25, epsilon = 1e-12);
        assert_relative_eq!(der.d2f_dalpha2, -8.0, epsilon = 1e-10);
    }

    #[test]
    fn f_degenerate_a_measure() {
        let model = SpectralModel::new(&[(0.0, 1.0)], &[(2.0, 1.0)], 50, 100).unwrap();
        let der = f_and_derivatives(&model, 1.0, -0.3).unwrap();
        // g = 0, so f = -alpha - mean_B / x and df/dalpha = -1.
        assert_relative_eq!(der.f, 0.3 - 2.0, epsilon = 1e-14);
        assert_relative_eq!(der.df_dalpha, -1.0, epsilon = 1e-14);
    }

    #[test]
    fn f_pole_collision_identifies_atom() {
        let model = SpectralModel::new(&[(2.0, 1.0)], &[(1.0, 1.0)], 50, 100).unwrap();
        let err = f_and_derivatives(&model, 1.0, -0.5).unwrap_err();
        assert!(matches!(err, Error::SingularKernel { atom, .. } if atom == 2.0));
    }

    #[test]
    fn z_of_alpha_recovers_mp_edges() {
        // f(., alpha) is increasing per branch; bracket right of the pole at
        // s*D(alpha) = 2.
        let model = null_mp_d(1, 1);
        let x = z_of_alpha(&model, -0.5, (2.5, 50.0)).unwrap();
        assert_relative_eq!(x, 4.0, epsilon = 1e-10);

        let quarter = null_mp_d(1, 4);
        let alpha = -1.0 / (1.0 + 0.25f64.sqrt());
        let x = z_of_alpha(&quarter, alpha, (1.0, 50.0)).unwrap();
        assert_relative_eq!(x, 2.25, epsilon = 1e-10);
    }

    #[test]
    fn z_of_alpha_rejects_bad_bracket() {
        let model = null_mp_d(1, 1);
        assert!(matches!(
            z_of_alpha(&model, -0.5, (30.0, 50.0)),
            Err(Error::NoBracket { .. })
        ));
    }

    #[test]
    fn rightmost_edge_null_models() {
        for (n, big_n, d) in [(100usize, 400usize, 0.25f64), (100, 200, 0.5), (100, 100, 1.0)] {
            let model = SpectralModel::null_mp(n, big_n).unwrap();
            let edge = find_rightmost_edge(&model, 0.05).unwrap();
            let expected = (1.0 + d.sqrt()).powi(2);
            assert_relative_eq!(edge.lambda_plus, expected, epsilon = 1e-8);
            let expected_alpha = -1.0 / (1.0 + d.sqrt());
            assert_relative_eq!(edge.alpha_star, expected_alpha, epsilon = 1e-8);
            assert!(edge.regular);
        }
    }

    #[test]
    fn edge_scaling_covariance() {
        let base = SpectralModel::null_mp(100, 200).unwrap();
        let scaled = SpectralModel::new(&[(4.0, 1.0)], &[(1.0, 1.0)], 100, 200).unwrap();
        let e0 = find_rightmost_edge(&base, 0.05).unwrap();
        let e1 = find_rightmost_edge(&scaled, 0.05).unwrap();
        assert_relative_eq!(e1.lambda_plus, 4.0 * e0.lambda_plus, epsilon = 1e-10);
        assert_relative_eq!(e1.alpha_star, e0.alpha_star / 4.0, epsilon = 1e-10);
    }

    #[test]
    fn edge_equations_hold_at_result() {
        for model in [fig1(), null_mp_d(1, 2)] {
            let edge = find_rightmost_edge(&model, 0.05).unwrap();
            let der = f_and_derivatives(&model, edge.lambda_plus, edge.alpha_star).unwrap();
            assert!(der.f.abs() <= 1e-8, "|f| = {:.3e}", der.f.abs());
            assert!(
                der.df_dalpha.abs() <= 1e-8,
                "|df/dalpha| = {:.3e}",
                der.df_dalpha.abs()
            );
            // Lemma-style brackets for the edge values.
            assert!(edge.alpha_star > -1.0 / model.sigma1() && edge.alpha_star < 0.0);
            assert!(edge.m1c_edge > -1.0 / model.tilde_sigma1() && edge.m1c_edge < 0.0);
        }
    }

    #[test]
    fn support_null_mp_half() {
        let model = null_mp_d(1, 2);
        let support = find_support(&model).unwrap();
        assert_eq!(support.intervals.len(), 1);
        let (a, b) = support.intervals[0];
        let half = 0.5f64;
        assert_relative_eq!(a, (1.0 - half.sqrt()).powi(2), epsilon = 1e-8);
        assert_relative_eq!(b, (1.0 + half.sqrt()).powi(2), epsilon = 1e-8);
    }

    #[test]
    fn support_null_mp_unit_has_hard_edge() {
        let model = null_mp_d(1, 1);
        let support = find_support(&model).unwrap();
        assert_eq!(support.intervals.len(), 1);
        let (a, b) = support.intervals[0];
        assert_eq!(a, 0.0);
        assert_relative_eq!(b, 4.0, epsilon = 1e-8);
    }

    #[test]
    fn support_right_end_is_lambda_plus_exactly() {
        let model = fig1();
        let edge = find_rightmost_edge(&model, 0.05).unwrap();
        let support = find_support(&model).unwrap();
        assert_eq!(edge.lambda_plus, support.intervals.last().unwrap().1);
    }

    #[test]
    fn gamma0_identity_and_null_value() {
        let model = null_mp_d(1, 1);
        let edge = find_rightmost_edge(&model, 0.05).unwrap();
        // Defining identity gamma0^3 (I2^2 J3 + I3 J2) = I1^2 J1.
        let ik = &edge.ik_jk;
        let lhs = edge.gamma0.powi(3) * (ik.i2 * ik.i2 * ik.j3 + ik.i3 * ik.j2);
        let rhs = ik.i1 * ik.i1 * ik.j1;
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        // Unit-ratio closed form: gamma0^3 = 1/16.
        assert_relative_eq!(edge.gamma0, (1.0f64 / 16.0).cbrt(), epsilon = 1e-8);
    }

    #[test]
    fn gamma0_matches_finite_difference_oracle() {
        // z''(alpha_*) from numerically differentiating z(alpha) twice must
        // match -d2f/dalpha2 / df/dz, and gamma0 via the first formula.
        let model = null_mp_d(1, 2);
        let edge = find_rightmost_edge(&model, 0.05).unwrap();
        let h = 1e-4;
        let z0 = rightmost_branch_z(&model, edge.alpha_star).unwrap();
        let zp = rightmost_branch_z(&model, edge.alpha_star + h).unwrap();
        let zm = rightmost_branch_z(&model, edge.alpha_star - h).unwrap();
        let zpp_fd = (zp - 2.0 * z0 + zm) / (h * h);
        let der = f_and_derivatives(&model, edge.lambda_plus, edge.alpha_star).unwrap();
        let zpp = -der.d2f_dalpha2 / der.df_dz;
        assert_relative_eq!(zpp_fd, zpp, max_relative = 1e-6);
        let gamma0_alt = (der.df_dz / (-0.5 * der.d2f_dalpha2) * edge.ik_jk.i1 * edge.ik_jk.i1)
            .cbrt();
        assert_relative_eq!(edge.gamma0, gamma0_alt, max_relative = 1e-6);
    }

    #[test]
    fn sqrt_coefficient_null_mp_closed_form() {
        // Taylor expansion of the unit-ratio density at its edge:
        // rho(4 - x) = sqrt(x(4-x))/(2 pi (4-x)) ~ sqrt(x)/(4 pi).
        let model = null_mp_d(1, 1);
        let edge = find_rightmost_edge(&model, 0.05).unwrap();
        let expected = 1.0 / (4.0 * std::f64::consts::PI);
        assert_relative_eq!(edge.sqrt_coeff_2c, expected, max_relative = 1e-10);
        // And numerically from the closed form at small x.
        let x: f64 = 1e-8;
        let rho = (x * (4.0 - x)).sqrt() / (2.0 * std::f64::consts::PI * (4.0 - x));
        assert_relative_eq!(rho / x.sqrt(), expected, max_relative = 1e-4);
    }

    #[test]
    fn sqrt_coefficient_scaling_covariance() {
        // m2c for the A -> cA model satisfies m2c'(c z) = m2c(z)/c, so the
        // density transforms as rho_2c'(x) = rho_2c(x/c)/c and the edge
        // coefficient picks up c^{-3/2}.
        let base = null_mp_d(1, 2);
        let scaled = SpectralModel::new(&[(4.0, 1.0)], &[(1.0, 1.0)], 100, 200).unwrap();
        let e0 = find_rightmost_edge(&base, 0.05).unwrap();
        let e1 = find_rightmost_edge(&scaled, 0.05).unwrap();
        assert_relative_eq!(
            e1.sqrt_coeff_2c,
            e0.sqrt_coeff_2c / 8.0,
            max_relative = 1e-8
        );
        // Numerical cross-check of the transform on the solved density.
        let cfg = SolverConfig::default();
        let x = e0.lambda_plus - 0.05;
        let rho_base = solve_at_warm(
            &base,
            ComplexPoint::new(x, 1e-7).unwrap(),
            None,
            &SolverConfig { max_iter: 200_000, ..cfg.clone() },
        )
        .unwrap()
        .m2c
        .im;
        let rho_scaled = solve_at_warm(
            &scaled,
            ComplexPoint::new(4.0 * x, 1e-7).unwrap(),
            None,
            &SolverConfig { max_iter: 200_000, ..cfg },
        )
        .unwrap()
        .m2c
        .im;
        assert_relative_eq!(rho_scaled, rho_base / 4.0, max_relative = 1e-3);
    }

    #[test]
    fn classical_locations_start_at_edge_and_decrease() {
        let model = null_mp_d(1, 1);
        let edge = find_rightmost_edge(&model, 0.05).unwrap();
        let locs =
            classical_locations(&model, &edge, 50, &SolverConfig::default()).unwrap();
        assert_eq!(locs.gamma(1), edge.lambda_plus);
        for j in 2..=50 {
            assert!(locs.gamma(j) <= locs.gamma(j - 1));
        }
    }

    #[test]
    fn counting_function_zero_beyond_edge() {
        let model = null_mp_d(1, 2);
        let edge = find_rightmost_edge(&model, 0.05).unwrap();
        let n = counting_function(&model, edge.lambda_plus, &SolverConfig::default()).unwrap();
        assert!(n.abs() < 1e-12);
        let n = counting_function(&model, edge.lambda_plus + 1.0, &SolverConfig::default()).unwrap();
        assert_eq!(n, 0.0);
    }
}
