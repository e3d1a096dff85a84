//! Semi-parametric marginal distributions and the Laplace-margin transform.
//!
//! Below the threshold `u` the distribution is a Gaussian-kernel smoothed
//! empirical cdf of every observed value; above it the tail is a generalised
//! Pareto distribution scaled by the kernel estimate of the exceedance
//! probability, so the two pieces join continuously at `u`.

use crate::error::{Error, Result};
use crate::kde::KernelCdf;
use crate::optim::{nelder_mead, Minimum, NelderMeadOptions};
use crate::stats::{mean, quantile_sorted};
use serde::{Deserialize, Serialize};

/// Below this |xi| the exponential limit (with a first-order correction) is used.
const XI_EPS: f64 = 1e-8;
const XI_MIN: f64 = -1.0;
const XI_MAX: f64 = 5.0;

pub const MIN_EXCEEDANCES: usize = 10;
pub const MIN_MARGINAL_OBS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    pub u: f64,
    pub sigma: f64,
    pub xi: f64,
    pub phi_u: f64,
    pub n_exc: usize,
    #[serde(default = "default_true")]
    pub converged: bool,
}

fn default_true() -> bool {
    true
}

/// Survivor of the excess `t = (r - u)/sigma` under shape `xi`.
fn excess_survivor(t: f64, xi: f64) -> f64 {
    if xi.abs() < XI_EPS {
        (-t).exp() * (1.0 + 0.5 * xi * t * t)
    } else {
        let base = 1.0 + xi * t;
        if base <= 0.0 {
            0.0
        } else {
            base.powf(-1.0 / xi)
        }
    }
}

fn neg_log_lik(excesses: &[f64], sigma: f64, xi: f64) -> f64 {
    if !(sigma > 0.0) || !(XI_MIN..=XI_MAX).contains(&xi) {
        return f64::INFINITY;
    }
    let n = excesses.len() as f64;
    if xi.abs() < XI_EPS {
        let mut s = 0.0;
        for &e in excesses {
            let t = e / sigma;
            s += t - xi * (0.5 * t * t - t);
        }
        return n * sigma.ln() + s;
    }
    let mut s = 0.0;
    for &e in excesses {
        let base = 1.0 + xi * e / sigma;
        if base <= 0.0 {
            return f64::INFINITY;
        }
        s += base.ln();
    }
    n * sigma.ln() + (1.0 + 1.0 / xi) * s
}

/// Maximum-likelihood GPD fit to the exceedances of `u`.
///
/// Optimises over `(log sigma, xi)` with `xi` restricted to (-1, 5), from
/// three starting points; the best local optimum wins.
pub fn fit_gpd(sample: &[f64], u: f64) -> Result<GpdFit> {
    let excesses: Vec<f64> = sample.iter().filter(|&&x| x > u).map(|&x| x - u).collect();
    let n_exc = excesses.len();
    if n_exc < MIN_EXCEEDANCES {
        return Err(Error::InsufficientData(format!(
            "{n_exc} exceedances of threshold {u}, need at least {MIN_EXCEEDANCES}"
        )));
    }
    let e_max = excesses.iter().cloned().fold(f64::MIN, f64::max);
    let e_min = excesses.iter().cloned().fold(f64::MAX, f64::min);
    if e_max - e_min <= 1e-12 * e_max.abs().max(1e-300) {
        return Err(Error::Degenerate(
            "all threshold excesses are equal; the shape parameter runs to the -1 boundary".into(),
        ));
    }
    let m = mean(&excesses);
    let var = excesses.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / (n_exc as f64 - 1.0);

    let objective = |theta: &[f64]| neg_log_lik(&excesses, theta[0].exp(), theta[1]);
    let feasible_start = |sigma: f64, xi: f64| -> [f64; 2] {
        let xi = xi.clamp(-0.9, 4.0);
        // keep every excess inside the support when xi < 0
        let sigma = if xi < 0.0 { sigma.max(-xi * e_max * 1.05) } else { sigma };
        [sigma.max(1e-12).ln(), xi]
    };
    let ratio = m * m / var;
    let starts = [
        feasible_start(0.5 * m * (ratio + 1.0), 0.5 * (1.0 - ratio)),
        feasible_start(m, 0.1),
        feasible_start(1.2 * m, -0.2),
    ];
    let opts = NelderMeadOptions {
        max_evals: 4000,
        f_tol: 1e-11,
        x_tol: 1e-10,
    };
    let mut best: Option<Minimum> = None;
    for s in &starts {
        let first = nelder_mead(objective, s, 0.2, &opts);
        // restart once from the optimum to escape a collapsed simplex
        let polish = nelder_mead(objective, &first.x, 0.05, &opts);
        let res = if polish.fx <= first.fx {
            Minimum {
                converged: first.converged || polish.converged,
                ..polish
            }
        } else {
            first
        };
        if best.as_ref().is_none_or(|b| res.fx < b.fx) {
            best = Some(res);
        }
    }
    let best = best.expect("at least one start");
    if !best.fx.is_finite() {
        return Err(Error::Fit("GPD likelihood is not finite at any start".into()));
    }
    Ok(GpdFit {
        u,
        sigma: best.x[0].exp(),
        xi: best.x[1],
        phi_u: n_exc as f64 / sample.len() as f64,
        n_exc,
        converged: best.converged,
    })
}

/// `P(R > r | R > u)` under the fitted GPD.
pub fn gpd_survival(fit: &GpdFit, r: f64) -> Result<f64> {
    if !(r > fit.u) {
        return Err(Error::Domain(format!("r = {r} is not above the threshold {}", fit.u)));
    }
    Ok(excess_survivor((r - fit.u) / fit.sigma, fit.xi))
}

/// Inverse of the conditional survivor: the value whose excess survivor is `q`.
fn gpd_inverse_survivor(fit: &GpdFit, q: f64) -> f64 {
    if fit.xi.abs() < XI_EPS {
        fit.u - fit.sigma * q.ln()
    } else {
        fit.u + fit.sigma / fit.xi * (q.powf(-fit.xi) - 1.0)
    }
}

/// Per-site marginal model: kernel body spliced to a GPD tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MarginalRepr", try_from = "MarginalRepr")]
pub struct MarginalModel {
    pub gpd: GpdFit,
    pub body: KernelCdf,
}

#[derive(Serialize, Deserialize)]
struct MarginalRepr {
    u: f64,
    sigma: f64,
    xi: f64,
    phi_u: f64,
    n_exc: usize,
    #[serde(default = "default_true")]
    converged: bool,
    bandwidth: f64,
    body_points: Vec<f64>,
}

impl From<MarginalModel> for MarginalRepr {
    fn from(m: MarginalModel) -> Self {
        Self {
            u: m.gpd.u,
            sigma: m.gpd.sigma,
            xi: m.gpd.xi,
            phi_u: m.gpd.phi_u,
            n_exc: m.gpd.n_exc,
            converged: m.gpd.converged,
            bandwidth: m.body.bandwidth(),
            body_points: m.body.points().to_vec(),
        }
    }
}

impl TryFrom<MarginalRepr> for MarginalModel {
    type Error = Error;
    fn try_from(r: MarginalRepr) -> Result<Self> {
        Ok(Self {
            gpd: GpdFit {
                u: r.u,
                sigma: r.sigma,
                xi: r.xi,
                phi_u: r.phi_u,
                n_exc: r.n_exc,
                converged: r.converged,
            },
            body: KernelCdf::new(r.body_points, r.bandwidth)?,
        })
    }
}

/// Fit the semi-parametric margin to the observed values of one site.
pub fn fit_marginal(sample: &[f64], threshold_quantile: f64) -> Result<MarginalModel> {
    if !(threshold_quantile > 0.0 && threshold_quantile < 1.0) {
        return Err(Error::Config(format!(
            "threshold quantile {threshold_quantile} outside (0, 1)"
        )));
    }
    if sample.len() < MIN_MARGINAL_OBS {
        return Err(Error::InsufficientData(format!(
            "{} observations, need at least {MIN_MARGINAL_OBS}",
            sample.len()
        )));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let u = quantile_sorted(&sorted, threshold_quantile);
    let mut gpd = fit_gpd(&sorted, u)?;
    let body = KernelCdf::fit(sorted, MIN_MARGINAL_OBS)?;
    gpd.phi_u = body.sf(u);
    Ok(MarginalModel { gpd, body })
}

impl MarginalModel {
    pub fn threshold(&self) -> f64 {
        self.gpd.u
    }

    pub fn cdf(&self, r: f64) -> f64 {
        if r <= self.gpd.u {
            self.body.cdf(r)
        } else {
            1.0 - self.sf(r)
        }
    }

    pub fn sf(&self, r: f64) -> f64 {
        if r <= self.gpd.u {
            self.body.sf(r)
        } else {
            self.gpd.phi_u * excess_survivor((r - self.gpd.u) / self.gpd.sigma, self.gpd.xi)
        }
    }

    /// Inverse of `cdf`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
        }
        if p <= 0.5 {
            self.body.quantile(p)
        } else {
            Ok(self.quantile_from_sf(1.0 - p))
        }
    }

    /// Value with survivor probability `s` in (0, 1/2].
    fn quantile_from_sf(&self, s: f64) -> f64 {
        if s < self.gpd.phi_u {
            gpd_inverse_survivor(&self.gpd, s / self.gpd.phi_u)
        } else if s == self.gpd.phi_u {
            self.gpd.u
        } else {
            // body: sf(x) = s with x <= u
            self.body
                .quantile(1.0 - s)
                .map(|x| x.min(self.gpd.u))
                .unwrap_or(self.gpd.u)
        }
    }

    /// Transform a native value to the standard Laplace scale.
    pub fn to_laplace(&self, r: f64) -> f64 {
        let c = self.cdf(r);
        if c < 0.5 {
            (2.0 * c).ln()
        } else if c <= 0.99 {
            // 1 - c keeps about 14 significant digits here
            -(2.0 * (1.0 - c)).ln()
        } else {
            -(2.0 * self.sf(r)).ln()
        }
    }

    /// Transform a standard Laplace value back to the native scale.
    pub fn from_laplace(&self, y: f64) -> f64 {
        if y < 0.0 {
            let p = 0.5 * y.exp();
            self.body.quantile(p).unwrap_or(f64::NEG_INFINITY)
        } else {
            self.quantile_from_sf(0.5 * (-y).exp())
        }
    }
}

/// Probability to standard Laplace.
pub fn to_laplace(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    Ok(if p < 0.5 {
        (2.0 * p).ln()
    } else {
        -(2.0 * (1.0 - p)).ln()
    })
}

/// Standard Laplace to probability.
pub fn from_laplace(y: f64) -> f64 {
    if y < 0.0 {
        0.5 * y.exp()
    } else {
        1.0 - 0.5 * (-y).exp()
    }
}

/// Laplace quantile `v_p = -log(2(1 - p))` for p >= 1/2.
pub fn laplace_upper_quantile(p: f64) -> Result<f64> {
    to_laplace(p)
}
