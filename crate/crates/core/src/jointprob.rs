//! Joint exceedance probabilities `P(R_i > q_i for all constrained i)`
//! for events whose conditioning site exceeds at least its dependence
//! threshold.
//!
//! The Monte Carlo estimator scales the hit fraction of conditional
//! simulations by the conditioning exceedance probability. The integral
//! estimator conditions on `Y_1 = s` and integrates the Gaussian-copula
//! survivor function of the residuals against the Laplace tail density.

use crate::error::{Error, Result};
use crate::margins::to_laplace;
use crate::model::{CondExModel, SiteModel};
use crate::mvn::{survivor_order, survivor_shifts_ordered, QmcOptions, ShiftEstimates};
use crate::simulate::ConditionalSampler;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Truncation of the integral: the Laplace tail beyond `y_1 + 40` has
/// mass below `e^{-40}` relative to the conditioning probability.
pub const TRUNCATION: f64 = 40.0;

/// Joint event on the Laplace scale. `levels[i] = -inf` leaves site `i`
/// unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEvent {
    pub cond_site: usize,
    pub levels: Vec<f64>,
}

impl JointEvent {
    /// From marginal non-exceedance probabilities; `None` leaves a site free.
    pub fn from_probabilities(model: &CondExModel, cond_site: usize, p: &[Option<f64>]) -> Result<Self> {
        check_len(model, p.len())?;
        let levels = p
            .iter()
            .map(|x| match x {
                None => Ok(f64::NEG_INFINITY),
                Some(q) if *q == 0.0 => Ok(f64::NEG_INFINITY),
                Some(q) => to_laplace(*q),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(model, cond_site, levels)
    }

    /// From native-scale thresholds; `None` leaves a site free.
    pub fn from_thresholds(model: &CondExModel, cond_site: usize, q: &[Option<f64>]) -> Result<Self> {
        check_len(model, q.len())?;
        let levels = q
            .iter()
            .enumerate()
            .map(|(s, x)| x.map_or(f64::NEG_INFINITY, |r| model.margins[s].to_laplace(r)))
            .collect();
        Self::new(model, cond_site, levels)
    }

    pub fn new(model: &CondExModel, cond_site: usize, levels: Vec<f64>) -> Result<Self> {
        check_len(model, levels.len())?;
        if cond_site >= levels.len() {
            return Err(Error::Domain(format!("conditioning site {cond_site} out of range")));
        }
        let v = model.dependence_threshold();
        if !(levels[cond_site] >= v) {
            return Err(Error::Domain(format!(
                "conditioning level {} is below the dependence threshold {v}",
                levels[cond_site]
            )));
        }
        Ok(Self { cond_site, levels })
    }

    /// `P(Y_cond > y_cond)` on Laplace margins.
    pub fn conditioning_probability(&self) -> f64 {
        0.5 * (-self.levels[self.cond_site]).exp()
    }
}

fn check_len(model: &CondExModel, n: usize) -> Result<()> {
    if n != model.n_sites() {
        return Err(Error::Domain(format!("expected {} levels, got {n}", model.n_sites())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub hits: usize,
    pub n: usize,
    /// No simulated event fell in the region; the integral estimator is
    /// better suited.
    pub zero_hits: bool,
}

pub fn joint_prob_mc(model: &CondExModel, event: &JointEvent, n: usize, seed: u64) -> Result<McEstimate> {
    let site = model.site(event.cond_site)?;
    joint_prob_mc_site(site, event, n, seed)
}

pub fn joint_prob_mc_site(site: &SiteModel, event: &JointEvent, n: usize, seed: u64) -> Result<McEstimate> {
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    let sampler = ConditionalSampler::new(&site.fit, &site.residuals)?;
    let y1 = event.levels[event.cond_site];
    let ev = sampler.sample(y1, n, seed);
    let hits = (0..n)
        .filter(|&r| {
            event
                .levels
                .iter()
                .enumerate()
                .all(|(s, &l)| s == event.cond_site || ev[(r, s)] > l)
        })
        .count();
    let scale = event.conditioning_probability();
    let f = hits as f64 / n as f64;
    Ok(McEstimate {
        estimate: scale * f,
        std_error: scale * (f * (1.0 - f) / n as f64).sqrt(),
        hits,
        n,
        zero_hits: hits == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralOptions {
    pub abs_tol: f64,
    pub max_depth: usize,
    pub qmc: QmcOptions,
}

impl Default for IntegralOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            max_depth: 30,
            qmc: QmcOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegralEstimate {
    pub estimate: f64,
    pub numerical_error: f64,
    /// Standard error from the randomised survivor evaluations.
    pub qmc_error: f64,
    /// Accumulated adaptive-quadrature error estimate.
    pub quadrature_error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Lower bounds below this are replaced by it; `Phi(40)` is 1 in f64.
const FLOOR: f64 = -40.0;

/// Survivor term at `Y_1 = s`, one value per random shift. Constrained
/// coordinates keep one integration order throughout so the integrand is
/// smooth in `s`.
struct Integrand<'a> {
    site: &'a SiteModel,
    event: &'a JointEvent,
    qmc: QmcOptions,
    coords: Vec<usize>,
    sigma: DMatrix<f64>,
    order: Vec<usize>,
}

impl<'a> Integrand<'a> {
    fn new(site: &'a SiteModel, event: &'a JointEvent, qmc: QmcOptions, s_ref: f64) -> Result<Self> {
        let fit = &site.fit;
        let coords: Vec<usize> = (0..fit.others.len())
            .filter(|&c| event.levels[fit.others[c]] > f64::NEG_INFINITY)
            .collect();
        let sigma_tilde = &site.residuals.sigma_tilde;
        let sigma = DMatrix::from_fn(coords.len(), coords.len(), |a, b| sigma_tilde[(coords[a], coords[b])]);
        let mut f = Self {
            site,
            event,
            qmc,
            coords,
            sigma,
            order: Vec::new(),
        };
        if !f.coords.is_empty() {
            let lower: Vec<f64> = f.bounds(s_ref).iter().map(|b| b.min(-FLOOR)).collect();
            f.order = survivor_order(&lower, &f.sigma)?;
        }
        Ok(f)
    }

    fn bounds(&self, s: f64) -> Vec<f64> {
        let fit = &self.site.fit;
        self.coords
            .iter()
            .map(|&c| {
                let y = self.event.levels[fit.others[c]];
                let z = (y - fit.alpha[c] * s) / s.powf(fit.beta[c]);
                self.site.residuals.margins[c].normal_score(z).max(FLOOR)
            })
            .collect()
    }

    fn eval(&self, s: f64) -> Result<Vec<f64>> {
        let shifts = self.qmc.shifts.max(2);
        if self.coords.is_empty() {
            return Ok(vec![1.0; shifts]);
        }
        Ok(match survivor_shifts_ordered(&self.bounds(s), &self.sigma, &self.order, &self.qmc)? {
            ShiftEstimates::Exact(v) => vec![v; shifts],
            ShiftEstimates::Random(e) => e,
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn combine(a: &[f64], b: &[f64], wa: f64, wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect()
}

struct Quadrature<'a, 'b> {
    f: &'a Integrand<'b>,
    evaluations: usize,
    error: f64,
    /// Error accepted on segments cut off by the depth limit.
    forced_error: f64,
    max_depth: usize,
}

impl Quadrature<'_, '_> {
    /// Node value `g(u)` with `s = y_1 - ln u`.
    fn g(&mut self, y1: f64, u: f64) -> Result<Vec<f64>> {
        self.evaluations += 1;
        self.f.eval(y1 - u.ln())
    }

    #[allow(clippy::too_many_arguments)]
    fn simpson(
        &mut self,
        y1: f64,
        a: f64,
        b: f64,
        fa: &[f64],
        fm: &[f64],
        fb: &[f64],
        whole: Vec<f64>,
        tol: f64,
        depth: usize,
    ) -> Result<Vec<f64>> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let flm = self.g(y1, lm)?;
        let frm = self.g(y1, rm)?;
        let h = (b - a) / 12.0;
        let left: Vec<f64> = (0..fa.len()).map(|i| h * (fa[i] + 4.0 * flm[i] + fm[i])).collect();
        let right: Vec<f64> = (0..fa.len()).map(|i| h * (fm[i] + 4.0 * frm[i] + fb[i])).collect();
        let refined = combine(&left, &right, 1.0, 1.0);
        let delta = mean(&refined) - mean(&whole);
        if delta.abs() <= 15.0 * tol || depth >= self.max_depth {
            if depth >= self.max_depth && delta.abs() > 15.0 * tol {
                self.forced_error += delta.abs() / 15.0;
            }
            self.error += delta.abs() / 15.0;
            // Richardson correction, applied per shift
            let diff = combine(&refined, &whole, 1.0, -1.0);
            return Ok(combine(&refined, &diff, 1.0, 1.0 / 15.0));
        }
        let l = self.simpson(y1, a, m, fa, &flm, fm, left, 0.5 * tol, depth + 1)?;
        let r = self.simpson(y1, m, b, fm, &frm, fb, right, 0.5 * tol, depth + 1)?;
        Ok(combine(&l, &r, 1.0, 1.0))
    }
}

/// One-dimensional integral form of the joint probability.
///
/// With `u = exp(y_1 - s)` the integral becomes
/// `P(Y_1 > y_1) * int_0^1 S(y_1 - ln u) du`, where `S` is the residual
/// survivor probability; the integrand lies in [0, 1]. Every node uses the
/// same random lattice shifts, so each shift yields a complete integral and
/// their spread gives the sampling error.
pub fn joint_prob_integral(model: &CondExModel, event: &JointEvent, opts: &IntegralOptions) -> Result<IntegralEstimate> {
    let site = model.site(event.cond_site)?;
    joint_prob_integral_site(site, event, opts)
}

pub fn joint_prob_integral_site(site: &SiteModel, event: &JointEvent, opts: &IntegralOptions) -> Result<IntegralEstimate> {
    let y1 = event.levels[event.cond_site];
    let f = Integrand::new(site, event, opts.qmc, y1 + std::f64::consts::LN_2)?;
    let scale = event.conditioning_probability();
    let mut q = Quadrature {
        f: &f,
        evaluations: 0,
        error: 0.0,
        forced_error: 0.0,
        max_depth: opts.max_depth,
    };
    let (a, b) = ((-TRUNCATION).exp(), 1.0);
    let fa = q.g(y1, a)?;
    let fb = q.g(y1, b)?;
    let fm = q.g(y1, 0.5 * (a + b))?;
    let whole: Vec<f64> = (0..fa.len())
        .map(|i| (b - a) / 6.0 * (fa[i] + 4.0 * fm[i] + fb[i]))
        .collect();
    let tol = opts.abs_tol / scale;
    let per_shift = q.simpson(y1, a, b, &fa, &fm, &fb, whole, tol, 0)?;
    let m = per_shift.len() as f64;
    let value = mean(&per_shift);
    let var = per_shift.iter().map(|x| (x - value).powi(2)).sum::<f64>() / (m - 1.0);
    let qmc_error = scale * (var / m).sqrt();
    let quadrature_error = scale * q.error;
    let mut numerical_error = (qmc_error.powi(2) + quadrature_error.powi(2)).sqrt();
    let converged = q.forced_error <= tol;
    if !converged {
        numerical_error = numerical_error.max(0.1 * scale * value);
    }
    Ok(IntegralEstimate {
        estimate: (scale * value).max(0.0),
        numerical_error,
        qmc_error,
        quadrature_error,
        evaluations: q.evaluations,
        converged,
    })
}
