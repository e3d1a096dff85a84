//! Conditional regression `Y_{-j} = alpha Y_j + Y_j^beta Z` above a
//! dependence threshold, fitted pair by pair by Gaussian pseudo-likelihood.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::margins::to_laplace;
use crate::optim::{nelder_mead, NelderMeadOptions};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const MIN_PAIRS: usize = 20;

const ALPHA_STARTS: [f64; 4] = [-0.5, 0.0, 0.5, 0.9];
const BETA_STARTS: [f64; 3] = [-0.5, 0.0, 0.5];

/// Regression parameters for one conditioning site. Vectors are indexed by
/// position in `others`, the remaining sites in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalFit {
    pub cond_index: usize,
    pub others: Vec<usize>,
    pub v: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(rename = "sigma")]
    pub sigma_res: Vec<f64>,
    pub n_v: usize,
    /// Positions whose pair fit failed and fell back to independence
    /// (`alpha = beta = 0`).
    #[serde(default)]
    pub fallback: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairFit {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub sigma: f64,
    pub n_pairs: usize,
    /// Profile negative log pseudo-likelihood at the optimum (up to a constant).
    pub nll: f64,
    pub converged: bool,
}

/// Residuals for the exceedances of one conditioning site.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub rows: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub y1: Vec<f64>,
}

impl ResidualSample {
    pub fn n_components(&self) -> usize {
        self.rows.ncols()
    }

    /// Observed values of one residual component.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.rows.nrows())
            .filter(|&r| self.mask[(r, k)])
            .map(|r| self.rows[(r, k)])
            .collect()
    }

    /// Rows with every component observed.
    pub fn complete_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows.nrows())
            .filter(|&r| (0..self.rows.ncols()).all(|k| self.mask[(r, k)]))
            .map(|r| self.rows.row(r).iter().copied().collect())
            .collect()
    }
}

/// Laplace-scale rows in which the conditioning site exceeds `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exceedances {
    pub cond_index: usize,
    pub others: Vec<usize>,
    pub v: f64,
    pub y1: Vec<f64>,
    pub y: DMatrix<f64>,
    pub mask: DMatrix<bool>,
}

impl Exceedances {
    pub fn from_dataset(yl: &Dataset, cond_index: usize, v: f64) -> Result<Self> {
        let d = yl.n_sites();
        if cond_index >= d {
            return Err(Error::Config(format!("conditioning site {cond_index} out of range")));
        }
        if !(v > 0.0) {
            return Err(Error::Config(format!("dependence threshold {v} must be positive")));
        }
        let others: Vec<usize> = (0..d).filter(|&i| i != cond_index).collect();
        let rows: Vec<usize> = (0..yl.n_rows())
            .filter(|&r| yl.get(r, cond_index).is_some_and(|y| y > v))
            .collect();
        let y1 = rows.iter().map(|&r| yl.values()[(r, cond_index)]).collect();
        let y = DMatrix::from_fn(rows.len(), others.len(), |a, b| yl.values()[(rows[a], others[b])]);
        let mask = DMatrix::from_fn(rows.len(), others.len(), |a, b| yl.mask()[(rows[a], others[b])]);
        Ok(Self {
            cond_index,
            others,
            v,
            y1,
            y,
            mask,
        })
    }

    pub fn n_v(&self) -> usize {
        self.y1.len()
    }

    /// Resampled copy made of the given exceedance rows (repeats allowed).
    pub fn select(&self, idx: &[usize]) -> Self {
        let k = self.others.len();
        Self {
            cond_index: self.cond_index,
            others: self.others.clone(),
            v: self.v,
            y1: idx.iter().map(|&i| self.y1[i]).collect(),
            y: DMatrix::from_fn(idx.len(), k, |a, b| self.y[(idx[a], b)]),
            mask: DMatrix::from_fn(idx.len(), k, |a, b| self.mask[(idx[a], b)]),
        }
    }

    fn pair(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        (0..self.n_v())
            .filter(|&r| self.mask[(r, k)])
            .map(|r| (self.y1[r], self.y[(r, k)]))
            .unzip()
    }
}

/// Closed-form profile of (mu, sigma) for fixed (alpha, beta); returns
/// (mu, sigma, nll).
fn profile(y1: &[f64], log_y1: &[f64], yi: &[f64], alpha: f64, beta: f64) -> (f64, f64, f64) {
    let m = y1.len() as f64;
    let mut sum = 0.0;
    let mut sum_log_scale = 0.0;
    let w: Vec<f64> = y1
        .iter()
        .zip(log_y1)
        .zip(yi)
        .map(|((&a, &la), &b)| {
            sum_log_scale += beta * la;
            let wv = (b - alpha * a) * (-beta * la).exp();
            sum += wv;
            wv
        })
        .collect();
    let mu = sum / m;
    let var = (w.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / m).max(1e-300);
    let nll = sum_log_scale + 0.5 * m * var.ln() + 0.5 * m;
    (mu, var.sqrt(), nll)
}

fn to_alpha(a: f64) -> f64 {
    a.tanh()
}

fn to_beta(b: f64) -> f64 {
    1.0 - b.exp()
}

/// Maximise the pairwise Gaussian pseudo-likelihood over (alpha, beta).
///
/// `y1` holds conditioning values above `v`; `yi` the concurrent values of
/// the other site (`None` when unobserved).
pub fn fit_pair(y1: &[f64], yi: &[Option<f64>], v: f64) -> Result<PairFit> {
    if y1.len() != yi.len() {
        return Err(Error::Domain("y1 and yi differ in length".into()));
    }
    let (a, b): (Vec<f64>, Vec<f64>) = y1
        .iter()
        .zip(yi)
        .filter_map(|(&s, t)| t.filter(|_| s > v).map(|t| (s, t)))
        .unzip();
    fit_pair_observed(&a, &b)
}

fn fit_pair_observed(y1: &[f64], yi: &[f64]) -> Result<PairFit> {
    let n = y1.len();
    if n < MIN_PAIRS {
        return Err(Error::InsufficientData(format!(
            "{n} concurrent exceedance pairs, need at least {MIN_PAIRS}"
        )));
    }
    if y1.iter().any(|&y| !(y > 0.0)) {
        return Err(Error::Domain("conditioning values must be positive".into()));
    }
    let log_y1: Vec<f64> = y1.iter().map(|y| y.ln()).collect();
    let objective = |x: &[f64]| profile(y1, &log_y1, yi, to_alpha(x[0]), to_beta(x[1])).2;
    let opts = NelderMeadOptions {
        max_evals: 1500,
        f_tol: 1e-10,
        x_tol: 1e-8,
    };
    let mut best: Option<crate::optim::Minimum> = None;
    for &a0 in &ALPHA_STARTS {
        for &b0 in &BETA_STARTS {
            let start = [f64::atanh(a0), (1.0 - b0).ln()];
            let res = nelder_mead(objective, &start, 0.3, &opts);
            if best.as_ref().is_none_or(|b| res.fx < b.fx) {
                best = Some(res);
            }
        }
    }
    let best = best.expect("non-empty start grid");
    let alpha = to_alpha(best.x[0]);
    let beta = to_beta(best.x[1]);
    let (mu, sigma, nll) = profile(y1, &log_y1, yi, alpha, beta);
    Ok(PairFit {
        alpha,
        beta,
        mu,
        sigma,
        n_pairs: n,
        nll,
        converged: best.converged,
    })
}

/// Profile negative log pseudo-likelihood of one pair at fixed (alpha, beta).
pub fn pair_nll(y1: &[f64], yi: &[f64], alpha: f64, beta: f64) -> f64 {
    let log_y1: Vec<f64> = y1.iter().map(|y| y.ln()).collect();
    profile(y1, &log_y1, yi, alpha, beta).2
}

/// Fit every pair of an exceedance set. Pairs with too few observations
/// fall back to independence and are listed in `fallback`.
pub fn fit_exceedances(exc: &Exceedances) -> ConditionalFit {
    let k = exc.others.len();
    let mut fit = ConditionalFit {
        cond_index: exc.cond_index,
        others: exc.others.clone(),
        v: exc.v,
        alpha: vec![0.0; k],
        beta: vec![0.0; k],
        mu: vec![0.0; k],
        sigma_res: vec![1.0; k],
        n_v: exc.n_v(),
        fallback: Vec::new(),
    };
    for c in 0..k {
        let (a, b) = exc.pair(c);
        match fit_pair_observed(&a, &b) {
            Ok(p) => {
                fit.alpha[c] = p.alpha;
                fit.beta[c] = p.beta;
                fit.mu[c] = p.mu;
                fit.sigma_res[c] = p.sigma;
            }
            Err(_) => {
                fit.fallback.push(c);
                if a.len() >= 2 {
                    let log_a: Vec<f64> = a.iter().map(|y| y.ln()).collect();
                    let (mu, sigma, _) = profile(&a, &log_a, &b, 0.0, 0.0);
                    fit.mu[c] = mu;
                    fit.sigma_res[c] = sigma.max(1e-8);
                }
            }
        }
    }
    fit
}

/// Regression with (alpha, beta) held fixed; only (mu, sigma) are profiled.
pub fn fixed_regression(exc: &Exceedances, alpha: &[f64], beta: &[f64]) -> Result<ConditionalFit> {
    let k = exc.others.len();
    if alpha.len() != k || beta.len() != k {
        return Err(Error::Domain("parameter vectors must match the component count".into()));
    }
    let mut mu = vec![0.0; k];
    let mut sigma = vec![1.0; k];
    for c in 0..k {
        let (a, b) = exc.pair(c);
        if !a.is_empty() {
            let log_a: Vec<f64> = a.iter().map(|y| y.ln()).collect();
            let (m, s, _) = profile(&a, &log_a, &b, alpha[c], beta[c]);
            mu[c] = m;
            sigma[c] = s.max(1e-8);
        }
    }
    Ok(ConditionalFit {
        cond_index: exc.cond_index,
        others: exc.others.clone(),
        v: exc.v,
        alpha: alpha.to_vec(),
        beta: beta.to_vec(),
        mu,
        sigma_res: sigma,
        n_v: exc.n_v(),
        fallback: Vec::new(),
    })
}

/// Laplace-scale dependence threshold for a probability level (> 1/2).
pub fn dependence_threshold(dependence_quantile: f64) -> Result<f64> {
    if !(dependence_quantile > 0.5 && dependence_quantile < 1.0) {
        return Err(Error::Config(format!(
            "dependence quantile {dependence_quantile} must lie in (0.5, 1)"
        )));
    }
    to_laplace(dependence_quantile)
}

/// Fit the conditional model for one conditioning site of a Laplace-scale dataset.
pub fn fit_conditional(yl: &Dataset, cond_index: usize, dependence_quantile: f64) -> Result<ConditionalFit> {
    let v = dependence_threshold(dependence_quantile)?;
    let exc = Exceedances::from_dataset(yl, cond_index, v)?;
    Ok(fit_exceedances(&exc))
}

/// Residuals of an exceedance set under a fitted regression.
pub fn residuals_of(fit: &ConditionalFit, exc: &Exceedances) -> ResidualSample {
    let n = exc.n_v();
    let k = exc.others.len();
    let rows = DMatrix::from_fn(n, k, |r, c| {
        if exc.mask[(r, c)] {
            let y1 = exc.y1[r];
            (exc.y[(r, c)] - fit.alpha[c] * y1) / y1.powf(fit.beta[c])
        } else {
            f64::NAN
        }
    });
    ResidualSample {
        rows,
        mask: exc.mask.clone(),
        y1: exc.y1.clone(),
    }
}

pub fn extract_residuals(fit: &ConditionalFit, yl: &Dataset) -> Result<ResidualSample> {
    let exc = Exceedances::from_dataset(yl, fit.cond_index, fit.v)?;
    Ok(residuals_of(fit, &exc))
}

/// Conditional mean and variance of `Y_{-j} | Y_j = y` for y above `v`.
pub fn conditional_moments(fit: &ConditionalFit, y: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(y > fit.v) {
        return Err(Error::Domain(format!("y = {y} is not above the threshold {}", fit.v)));
    }
    let mean = (0..fit.alpha.len())
        .map(|c| fit.alpha[c] * y + y.powf(fit.beta[c]) * fit.mu[c])
        .collect();
    let var = (0..fit.alpha.len())
        .map(|c| (y.powf(fit.beta[c]) * fit.sigma_res[c]).powi(2))
        .collect();
    Ok((mean, var))
}

impl ConditionalFit {
    /// Rebuild `y` from residual `z` for component `c`.
    pub fn reconstruct(&self, c: usize, y1: f64, z: f64) -> f64 {
        self.alpha[c] * y1 + y1.powf(self.beta[c]) * z
    }
}
