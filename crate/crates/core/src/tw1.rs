//! Embedded type-1 Tracy-Widom reference distribution.
//!
//! The table asset is generated (see the `tw1gen` binary) as the Fredholm
//! determinant `F1(s) = det(I - K)` of the kernel `K(x, y) = Ai((x+y)/2)/2`
//! on `L^2(s, s+20)`, discretized by 200-point Gauss-Legendre Nystrom
//! quadrature. The Airy function is computed from its asymptotic expansion
//! at the far right anchor and propagated by Taylor steps of the defining
//! ODE `y'' = x y`; the march is validated against the exact values at
//! zero.

use crate::error::{Error, Result};
use serde::Serialize;
use std::sync::OnceLock;

pub const TABLE_S_MIN: f64 = -10.0;
pub const TABLE_S_MAX: f64 = 6.0;
pub const TABLE_STEP: f64 = 0.01;
pub const NYSTROM_INTERVAL: f64 = 20.0;
pub const NYSTROM_NODES: usize = 200;

/// Airy function of the first kind on `[-12, 27]`.
pub mod airy {
    use std::sync::OnceLock;

    const ANCHOR_LO: f64 = -12.0;
    const ANCHOR_HI: f64 = 27.0;
    const ANCHOR_STEP: f64 = 0.25;

    /// `(Ai, Ai')` at the anchor from the large-x asymptotic series
    /// `Ai(x) = e^{-zeta}/(2 sqrt(pi) x^{1/4}) sum (-1)^k u_k zeta^{-k}`.
    fn asymptotic_anchor(x: f64) -> (f64, f64) {
        let zeta = 2.0 / 3.0 * x.powf(1.5);
        let mut u = 1.0f64;
        let mut sum_u = 1.0f64;
        let mut sum_v = 1.0f64;
        let mut sign = 1.0f64;
        let mut zk = 1.0f64;
        for k in 1..=12 {
            let kf = k as f64;
            u *= (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
                / ((2.0 * kf - 1.0) * 216.0 * kf);
            let v = u * (6.0 * kf + 1.0) / (1.0 - 6.0 * kf);
            sign = -sign;
            zk *= zeta;
            sum_u += sign * u / zk;
            sum_v += sign * v / zk;
        }
        let front = (-zeta).exp() / (2.0 * std::f64::consts::PI.sqrt());
        let ai = front / x.powf(0.25) * sum_u;
        let dai = -front * x.powf(0.25) * sum_v;
        (ai, dai)
    }

    /// One Taylor step of `y'' = x y` from `(a, y, dy)` to `a + h`.
    fn taylor_step(a: f64, y: f64, dy: f64, h: f64) -> (f64, f64) {
        let terms = 34;
        let mut c = Vec::with_capacity(terms);
        c.push(y);
        c.push(dy);
        for k in 0..terms - 2 {
            let prev = if k == 0 { 0.0 } else { c[k - 1] };
            let next = (a * c[k] + prev) / ((k + 2) as f64 * (k + 1) as f64);
            c.push(next);
        }
        let mut val = 0.0;
        let mut der = 0.0;
        for k in (0..terms).rev() {
            val = val * h + c[k];
            if k >= 1 {
                der = der * h + k as f64 * c[k];
            }
        }
        (val, der)
    }

    fn anchors() -> &'static Vec<(f64, f64, f64)> {
        static ANCHORS: OnceLock<Vec<(f64, f64, f64)>> = OnceLock::new();
        ANCHORS.get_or_init(|| {
            let steps = ((ANCHOR_HI - ANCHOR_LO) / ANCHOR_STEP).round() as usize;
            let mut list = vec![(0.0, 0.0, 0.0); steps + 1];
            let (mut y, mut dy) = asymptotic_anchor(ANCHOR_HI);
            list[steps] = (ANCHOR_HI, y, dy);
            // March down in the growing direction, which is stable.
            for k in (0..steps).rev() {
                let a = ANCHOR_LO + ANCHOR_STEP * (k + 1) as f64;
                let (ny, ndy) = taylor_step(a, y, dy, -ANCHOR_STEP);
                y = ny;
                dy = ndy;
                list[k] = (a - ANCHOR_STEP, y, dy);
            }
            list
        })
    }

    /// `Ai(x)`; panics outside the tabulated range, which the kernel
    /// arguments never leave.
    pub fn ai(x: f64) -> f64 {
        assert!(
            (ANCHOR_LO..=ANCHOR_HI).contains(&x),
            "Airy argument {x} outside [{ANCHOR_LO}, {ANCHOR_HI}]"
        );
        let anchors = anchors();
        let idx = (((x - ANCHOR_LO) / ANCHOR_STEP).round() as usize).min(anchors.len() - 1);
        let (a, y, dy) = anchors[idx];
        taylor_step(a, y, dy, x - a).0
    }

    /// Largest deviation of the marched values from the exact `Ai(0)`,
    /// `Ai'(0)`; used as a self check of the anchor construction.
    pub fn march_defect() -> f64 {
        let g13 = statrs::function::gamma::gamma(1.0 / 3.0);
        let g23 = statrs::function::gamma::gamma(2.0 / 3.0);
        let exact0 = 1.0 / (3f64.powf(2.0 / 3.0) * g23);
        let dexact0 = -1.0 / (3f64.powf(1.0 / 3.0) * g13);
        let anchors = anchors();
        let idx = ((0.0 - ANCHOR_LO) / ANCHOR_STEP).round() as usize;
        let (a, y, dy) = anchors[idx];
        debug_assert_eq!(a, 0.0);
        ((y - exact0) / exact0)
            .abs()
            .max(((dy - dexact0) / dexact0).abs())
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P_n'(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn nystrom_nodes() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(NYSTROM_NODES))
}

/// `det(I - K)` for the symmetrized Nystrom discretization of the Airy
/// half-sum kernel on `(s, s + NYSTROM_INTERVAL)`.
pub fn fredholm_f1(s: f64) -> f64 {
    let (t, w) = nystrom_nodes();
    let n = t.len();
    let half = 0.5 * NYSTROM_INTERVAL;
    let xs: Vec<f64> = t.iter().map(|&ti| s + half * (ti + 1.0)).collect();
    let sw: Vec<f64> = w.iter().map(|&wi| (wi * half).sqrt()).collect();
    let mut mat = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = 0.5 * airy::ai(0.5 * (xs[i] + xs[j])) * sw[i] * sw[j];
            let v = if i == j { 1.0 - k } else { -k };
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    mat.determinant()
}

/// Generates the full table on the standard grid. Values are clamped to
/// `[0, 1]` and monotonized; the adjustment is bounded by the quadrature
/// noise (~1e-12).
pub fn generate_table() -> Tw1Table {
    use rayon::prelude::*;
    let count = ((TABLE_S_MAX - TABLE_S_MIN) / TABLE_STEP).round() as usize + 1;
    let raw: Vec<(f64, f64)> = (0..count)
        .into_par_iter()
        .map(|k| {
            let s = TABLE_S_MIN + TABLE_STEP * k as f64;
            (s, fredholm_f1(s))
        })
        .collect();
    let mut table = Tw1Table {
        s: Vec::with_capacity(count),
        f: Vec::with_capacity(count),
    };
    let mut running = 0.0f64;
    for (s, f) in raw {
        running = f.clamp(running, 1.0);
        table.s.push(s);
        table.f.push(running);
    }
    table
}

/// Tabulated CDF with monotone cubic interpolation between knots.
#[derive(Debug, Clone, Serialize)]
pub struct Tw1Table {
    pub s: Vec<f64>,
    pub f: Vec<f64>,
}

impl Tw1Table {
    /// The table shipped with the crate.
    pub fn embedded() -> &'static Tw1Table {
        static TABLE: OnceLock<Tw1Table> = OnceLock::new();
        TABLE.get_or_init(|| {
            let table = Tw1Table::from_csv(include_str!("../assets/tw1_f1.csv"))
                .expect("embedded table parses");
            table.validate().expect("embedded table is valid");
            table
        })
    }

    /// Parses the `s,F1` CSV, skipping `#` comment lines.
    pub fn from_csv(text: &str) -> Result<Tw1Table> {
        let mut s = Vec::new();
        let mut f = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("s,") {
                continue;
            }
            let mut parts = line.split(',');
            let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
                return Err(Error::InvalidTable(format!("line {}: {line:?}", lineno + 1)));
            };
            s.push(a.trim().parse::<f64>().map_err(|e| {
                Error::InvalidTable(format!("line {}: {e}", lineno + 1))
            })?);
            f.push(b.trim().parse::<f64>().map_err(|e| {
                Error::InvalidTable(format!("line {}: {e}", lineno + 1))
            })?);
        }
        if s.len() < 2 {
            return Err(Error::InvalidTable("fewer than two knots".into()));
        }
        Ok(Tw1Table { s, f })
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# type-1 Tracy-Widom CDF F1(s)")?;
        writeln!(
            w,
            "# provenance: Fredholm determinant det(I - K) on L^2(s, s+{NYSTROM_INTERVAL}), \
             kernel K(x,y) = Ai((x+y)/2)/2"
        )?;
        writeln!(
            w,
            "# Nystrom discretization: {NYSTROM_NODES}-point Gauss-Legendre; Airy by \
             asymptotic anchor + Taylor ODE march; values clamped to [0,1] and monotonized"
        )?;
        writeln!(w, "# regenerate with: cargo run --release -p sepcov-cli --bin tw1gen")?;
        writeln!(w, "s,F1")?;
        for (s, f) in self.s.iter().zip(&self.f) {
            writeln!(w, "{s},{f:.15e}")?;
        }
        Ok(())
    }

    /// Monotonicity, range, and endpoint-mass checks.
    pub fn validate(&self) -> Result<()> {
        if self.s.len() != self.f.len() || self.s.len() < 2 {
            return Err(Error::InvalidTable("length mismatch".into()));
        }
        if self.s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTable("knots not increasing".into()));
        }
        if self.f.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidTable("F1 not non-decreasing".into()));
        }
        if self.f.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidTable("F1 outside [0, 1]".into()));
        }
        let left = *self.f.first().unwrap();
        let right = *self.f.last().unwrap();
        if left >= 1e-7 {
            return Err(Error::InvalidTable(format!("left endpoint mass {left:.3e}")));
        }
        // The true right tail at s = 6 is ~2e-6, so the gate sits at 1e-5.
        if right <= 1.0 - 1e-5 {
            return Err(Error::InvalidTable(format!(
                "right endpoint mass {:.3e}",
                1.0 - right
            )));
        }
        Ok(())
    }

    /// Interpolated CDF, clamped to `[0, 1]`; 0 left of the table and 1
    /// right of it. Fritsch-Carlson slopes keep the interpolant monotone
    /// between knots.
    pub fn cdf(&self, s: f64) -> f64 {
        let n = self.s.len();
        if s <= self.s[0] {
            return if s < self.s[0] { 0.0 } else { self.f[0] };
        }
        if s >= self.s[n - 1] {
            return if s > self.s[n - 1] { 1.0 } else { self.f[n - 1] };
        }
        let i = self.s.partition_point(|&x| x <= s).saturating_sub(1);
        let h = self.s[i + 1] - self.s[i];
        let delta = (self.f[i + 1] - self.f[i]) / h;
        let slope_at = |j: usize| -> f64 {
            if j == 0 || j == n - 1 {
                let (d, d2) = if j == 0 {
                    (
                        (self.f[1] - self.f[0]) / (self.s[1] - self.s[0]),
                        (self.f[2] - self.f[1]) / (self.s[2] - self.s[1]),
                    )
                } else {
                    (
                        (self.f[n - 1] - self.f[n - 2]) / (self.s[n - 1] - self.s[n - 2]),
                        (self.f[n - 2] - self.f[n - 3]) / (self.s[n - 2] - self.s[n - 3]),
                    )
                };
                let m = 1.5 * d - 0.5 * d2;
                if m * d <= 0.0 {
                    0.0
                } else {
                    m.min(3.0 * d.abs()).max(0.0)
                }
            } else {
                let h0 = self.s[j] - self.s[j - 1];
                let h1 = self.s[j + 1] - self.s[j];
                let d0 = (self.f[j] - self.f[j - 1]) / h0;
                let d1 = (self.f[j + 1] - self.f[j]) / h1;
                if d0 * d1 <= 0.0 {
                    0.0
                } else {
                    let w1 = 2.0 * h1 + h0;
                    let w2 = h1 + 2.0 * h0;
                    (w1 + w2) / (w1 / d0 + w2 / d1)
                }
            }
        };
        let m0 = slope_at(i);
        let m1 = slope_at(i + 1);
        let t = (s - self.s[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let value = self.f[i] * (2.0 * t3 - 3.0 * t2 + 1.0)
            + h * m0 * (t3 - 2.0 * t2 + t)
            + self.f[i + 1] * (-2.0 * t3 + 3.0 * t2)
            + h * m1 * (t3 - t2);
        let _ = delta;
        value.clamp(0.0, 1.0)
    }

    /// Mean and standard deviation computed from the tabulated increments.
    pub fn mean_sd(&self) -> (f64, f64) {
        let mut mean = 0.0;
        let mut second = 0.0;
        for i in 1..self.s.len() {
            let mid = 0.5 * (self.s[i] + self.s[i - 1]);
            let df = self.f[i] - self.f[i - 1];
            mean += mid * df;
            second += mid * mid * df;
        }
        // Account for the sub-1e-6 tail mass left outside the table.
        let mass: f64 = self.f.last().unwrap() - self.f.first().unwrap();
        mean /= mass;
        second /= mass;
        (mean, (second - mean * mean).sqrt())
    }
}
