//! Gaussian-kernel smoothed distribution functions.
//!
//! `G(x) = (1/m) sum_j Phi((x - z_j) / h)`. Points are kept sorted so that
//! evaluation only visits kernels whose contribution is not saturated at 0
//! or 1 in double precision.

use crate::error::{Error, Result};
use crate::stats::{norm_cdf, norm_pdf, norm_quantile, norm_sf, quantile_sorted, silverman_bandwidth};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Beyond this many bandwidths a kernel's cdf equals 1 in f64 and its
/// density is below 1e-17.
const SATURATE: f64 = 9.0;
/// Beyond this many bandwidths a kernel's tail mass underflows.
const UNDERFLOW: f64 = 38.5;

/// Normal-score range and spacing of the interpolated quantile table.
const TABLE_LIMIT: f64 = 8.0;
const TABLE_STEP: f64 = 1.0 / 32.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "KernelCdfRepr")]
pub struct KernelCdf {
    points: Vec<f64>,
    h: f64,
    #[serde(skip)]
    table: OnceLock<QuantileTable>,
}

impl PartialEq for KernelCdf {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.h == other.h
    }
}

/// Cubic Hermite interpolant of `x(zn) = G^{-1}(Phi(zn))` with exact node
/// values and slopes `phi(zn) / g(x)`.
#[derive(Debug, Clone)]
struct QuantileTable {
    x: Vec<f64>,
    slope: Vec<f64>,
}

#[derive(Deserialize)]
struct KernelCdfRepr {
    points: Vec<f64>,
    h: f64,
}

impl TryFrom<KernelCdfRepr> for KernelCdf {
    type Error = Error;
    fn try_from(r: KernelCdfRepr) -> Result<Self> {
        KernelCdf::new(r.points, r.h)
    }
}

#[derive(Clone, Copy)]
enum Side {
    Lower,
    Upper,
}

impl KernelCdf {
    pub fn new(mut points: Vec<f64>, h: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientData("kernel cdf needs at least one point".into()));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Domain(format!("bandwidth must be positive, got {h}")));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Domain("kernel points must be finite".into()));
        }
        points.sort_by(|a, b| a.total_cmp(b));
        Ok(Self {
            points,
            h,
            table: OnceLock::new(),
        })
    }

    /// Fit with Silverman's bandwidth. Requires `min_points` values.
    pub fn fit(points: Vec<f64>, min_points: usize) -> Result<Self> {
        if points.len() < min_points {
            return Err(Error::InsufficientData(format!(
                "{} values, need at least {min_points}",
                points.len()
            )));
        }
        let h = silverman_bandwidth(&points);
        Self::new(points, h)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    /// Index range of points inside `[x - left*h, x + right*h]`.
    fn window(&self, x: f64, left: f64, right: f64) -> (usize, usize) {
        let lo = self.points.partition_point(|&z| z < x - left * self.h);
        let hi = self.points.partition_point(|&z| z <= x + right * self.h);
        (lo, hi)
    }

    /// Sum of kernel terms over `[x - left*h, x + right*h]`, plus `full`
    /// for every point left of the window.
    fn partial(&self, x: f64, left: f64, right: f64, term: impl Fn(f64) -> f64) -> (f64, usize, usize) {
        let (lo, hi) = self.window(x, left, right);
        let s = self.points[lo..hi].iter().map(|&z| term(z)).sum::<f64>();
        (s, lo, hi)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let term = |z: f64| norm_cdf((x - z) / self.h);
        let (mut s, lo, _) = self.partial(x, SATURATE, SATURATE, term);
        s += lo as f64;
        // terms beyond the core window are below 1e-19 each; they only
        // matter when the total itself is small
        if s < 1.0 {
            s = lo as f64 + self.partial(x, SATURATE, UNDERFLOW, term).0;
        }
        s / self.points.len() as f64
    }

    pub fn sf(&self, x: f64) -> f64 {
        let term = |z: f64| norm_sf((x - z) / self.h);
        let (mut s, _, hi) = self.partial(x, SATURATE, SATURATE, term);
        let above = (self.points.len() - hi) as f64;
        s += above;
        if s < 1.0 {
            s = above + self.partial(x, UNDERFLOW, SATURATE, term).0;
        }
        s / self.points.len() as f64
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let term = |z: f64| norm_pdf((x - z) / self.h);
        let (mut s, _, _) = self.partial(x, SATURATE, SATURATE, term);
        if s < 1.0 {
            s = self.partial(x, UNDERFLOW, UNDERFLOW, term).0;
        }
        s / (self.points.len() as f64 * self.h)
    }

    /// Normal score `Phi^{-1}(G(x))`, computed from whichever tail is smaller.
    pub fn normal_score(&self, x: f64) -> f64 {
        let c = self.cdf(x);
        if c <= 0.5 {
            norm_quantile(c)
        } else {
            -norm_quantile(self.sf(x))
        }
    }

    /// Inverse of `cdf`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
        }
        Ok(if p <= 0.5 {
            self.solve(Side::Lower, p)
        } else {
            self.solve(Side::Upper, 1.0 - p)
        })
    }

    /// `G^{-1}(Phi(zn))` without losing precision in either tail.
    pub fn quantile_from_normal_score(&self, zn: f64) -> f64 {
        if zn <= 0.0 {
            let t = norm_cdf(zn);
            if t <= 0.0 {
                return f64::NEG_INFINITY;
            }
            self.solve(Side::Lower, t)
        } else {
            let t = norm_sf(zn);
            if t <= 0.0 {
                return f64::INFINITY;
            }
            self.solve(Side::Upper, t)
        }
    }

    /// Fast approximation of `quantile_from_normal_score` for simulation:
    /// cubic Hermite interpolation on a grid of exact inverses for
    /// `|zn| <= 8`, exact inversion beyond.
    pub fn interpolated_quantile(&self, zn: f64) -> f64 {
        let pos = (zn + TABLE_LIMIT) / TABLE_STEP;
        let t = self.table.get_or_init(|| self.build_table());
        let last = t.x.len() - 1;
        if !(pos >= 0.0 && pos < last as f64) {
            return self.quantile_from_normal_score(zn);
        }
        let i = pos as usize;
        let u = pos - i as f64;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * t.x[i] + h01 * t.x[i + 1] + TABLE_STEP * (h10 * t.slope[i] + h11 * t.slope[i + 1])
    }

    fn build_table(&self) -> QuantileTable {
        let n = (2.0 * TABLE_LIMIT / TABLE_STEP).round() as usize + 1;
        let mut x = Vec::with_capacity(n);
        let mut slope = Vec::with_capacity(n);
        for i in 0..n {
            let zn = -TABLE_LIMIT + i as f64 * TABLE_STEP;
            let xi = self.quantile_from_normal_score(zn);
            x.push(xi);
            slope.push(norm_pdf(zn) / self.pdf(xi));
        }
        QuantileTable { x, slope }
    }

    /// Safeguarded Newton iteration for `cdf(x) = target` (Lower) or
    /// `sf(x) = target` (Upper), with `target` in (0, 1/2].
    fn solve(&self, side: Side, target: f64) -> f64 {
        let h = self.h;
        let min = self.points[0];
        let max = *self.points.last().unwrap();
        let zq = norm_quantile(target);
        let (mut lo, mut hi) = match side {
            Side::Lower => (min + h * zq, max + h * zq),
            Side::Upper => (min - h * zq, max - h * zq),
        };
        if lo == hi {
            return lo;
        }
        let resid = |x: f64| -> f64 {
            match side {
                Side::Lower => self.cdf(x) - target,
                Side::Upper => target - self.sf(x),
            }
        };
        let p_lower = match side {
            Side::Lower => target,
            Side::Upper => 1.0 - target,
        };
        let mut x = quantile_sorted(&self.points, p_lower).clamp(lo, hi);
        let tol = 1e-13 * target;
        for _ in 0..200 {
            let r = resid(x);
            if r.abs() <= tol {
                return x;
            }
            if r < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
                return x;
            }
            let dens = self.pdf(x);
            let step = if dens > 0.0 { x - r / dens } else { f64::NAN };
            x = if step > lo && step < hi {
                step
            } else {
                0.5 * (lo + hi)
            };
        }
        x
    }
}
