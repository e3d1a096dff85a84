//! Multivariate normal sampling and survivor probabilities.
//!
//! Survivor probabilities `P(X > a)` use separation of variables with
//! variable reordering, integrated on a randomly shifted rank-1 lattice.
//! Each random shift gives an independent unbiased estimate; the spread
//! across shifts is the reported standard error.

use crate::error::{Error, Result};
use crate::residual_copula::{min_eigenvalue, nearest_pd};
use crate::rng::substream;
use crate::stats::{norm_cdf, norm_pdf, norm_quantile, norm_sf};
use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const SAMPLE_BATCH: usize = 4096;
const NEAR_SINGULAR: f64 = 1e-10;

/// Lower Cholesky factor.
pub fn cholesky(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() || sigma.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    Cholesky::new(sigma.clone())
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite)
}

/// `n` rows drawn i.i.d. from `N(0, sigma)`.
pub fn mvn_sample(sigma: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let l = cholesky(sigma)?;
    let k = l.nrows();
    let batches: Vec<Vec<f64>> = (0..n.div_ceil(SAMPLE_BATCH))
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let rows = SAMPLE_BATCH.min(n - b * SAMPLE_BATCH);
            let mut out = Vec::with_capacity(rows * k);
            let mut e = vec![0.0; k];
            for _ in 0..rows {
                for x in e.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
                for i in 0..k {
                    out.push((0..=i).map(|j| l[(i, j)] * e[j]).sum());
                }
            }
            out
        })
        .collect();
    let flat: Vec<f64> = batches.concat();
    Ok(DMatrix::from_row_slice(n, k, &flat))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmcOptions {
    pub points: usize,
    pub shifts: usize,
    pub target_error: f64,
    pub seed: u64,
}

impl Default for QmcOptions {
    fn default() -> Self {
        Self {
            points: 1 << 13,
            shifts: 8,
            target_error: 1e-6,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvnProbResult {
    pub value: f64,
    pub est_error: f64,
    pub n_points: usize,
    /// False when `est_error` exceeds the requested target.
    pub within_tolerance: bool,
}

impl MvnProbResult {
    fn exact(value: f64) -> Self {
        Self {
            value,
            est_error: 0.0,
            n_points: 0,
            within_tolerance: true,
        }
    }
}

/// Reordered Cholesky factor and upper limits for `P(W <= b)`, `W ~ N(0, S)`.
struct Ordered {
    l: DMatrix<f64>,
    b: Vec<f64>,
    perm: Vec<usize>,
}

fn reorder(sigma: &DMatrix<f64>, b: &[f64]) -> Result<Ordered> {
    let k = b.len();
    let mut s = sigma.clone();
    let mut b = b.to_vec();
    let mut l = DMatrix::<f64>::zeros(k, k);
    let mut y = vec![0.0; k];
    let mut perm: Vec<usize> = (0..k).collect();
    for i in 0..k {
        // pick the remaining variable with the smallest conditional probability
        let mut best = (i, f64::INFINITY, 0.0);
        for j in i..k {
            let var = s[(j, j)] - (0..i).map(|m| l[(j, m)] * l[(j, m)]).sum::<f64>();
            if var <= 0.0 {
                continue;
            }
            let c = (b[j] - (0..i).map(|m| l[(j, m)] * y[m]).sum::<f64>()) / var.sqrt();
            let p = norm_cdf(c);
            if p < best.1 {
                best = (j, p, c);
            }
        }
        let (j, _, c) = best;
        if j != i {
            s.swap_rows(i, j);
            s.swap_columns(i, j);
            b.swap(i, j);
            perm.swap(i, j);
            for m in 0..i {
                let t = l[(i, m)];
                l[(i, m)] = l[(j, m)];
                l[(j, m)] = t;
            }
        }
        let var = s[(i, i)] - (0..i).map(|m| l[(i, m)] * l[(i, m)]).sum::<f64>();
        if !(var > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let lii = var.sqrt();
        l[(i, i)] = lii;
        for r in i + 1..k {
            l[(r, i)] = (s[(r, i)] - (0..i).map(|m| l[(r, m)] * l[(i, m)]).sum::<f64>()) / lii;
        }
        let p = norm_cdf(c);
        y[i] = if p > 1e-300 { -norm_pdf(c) / p } else { c };
    }
    Ok(Ordered { l, b, perm })
}

fn fixed_order(sigma: &DMatrix<f64>, b: &[f64], perm: &[usize]) -> Result<Ordered> {
    let k = b.len();
    if perm.len() != k {
        return Err(Error::Domain("ordering length differs from dimension".into()));
    }
    let s = DMatrix::from_fn(k, k, |i, j| sigma[(perm[i], perm[j])]);
    Ok(Ordered {
        l: cholesky(&s)?,
        b: perm.iter().map(|&i| b[i]).collect(),
        perm: perm.to_vec(),
    })
}

/// Integration order chosen by variable reordering for these bounds. All
/// bounds must be finite.
pub fn survivor_order(lower: &[f64], sigma: &DMatrix<f64>) -> Result<Vec<usize>> {
    let b: Vec<f64> = lower.iter().map(|a| -a).collect();
    Ok(reorder(sigma, &b)?.perm)
}

/// Per-shift survivor estimates with a fixed integration order and no
/// marginalisation, so the estimates vary smoothly with finite bounds.
pub fn survivor_shifts_ordered(
    lower: &[f64],
    sigma: &DMatrix<f64>,
    order: &[usize],
    opts: &QmcOptions,
) -> Result<ShiftEstimates> {
    if lower.iter().any(|&a| a == f64::INFINITY) {
        return Ok(ShiftEstimates::Exact(0.0));
    }
    if lower.len() == 1 {
        return Ok(ShiftEstimates::Exact(norm_sf(lower[0] / sigma[(0, 0)].sqrt())));
    }
    let b: Vec<f64> = lower.iter().map(|a| -a).collect();
    let o = fixed_order(sigma, &b, order)?;
    Ok(ShiftEstimates::Random(shift_estimates(&o, opts)))
}

fn shift_estimates(o: &Ordered, opts: &QmcOptions) -> Vec<f64> {
    let dim = o.b.len() - 1;
    let gen: Vec<f64> = primes(dim).iter().map(|&p| (p as f64).sqrt().fract()).collect();
    (0..opts.shifts.max(2))
        .into_par_iter()
        .map(|s| {
            let mut rng = substream(opts.seed, s as u64);
            let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            lattice_estimate(o, &gen, &shift, opts.points)
        })
        .collect()
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut n = 2u64;
    while out.len() < count {
        if (2..n).take_while(|d| d * d <= n).all(|d| n % d != 0) {
            out.push(n);
        }
        n += 1;
    }
    out
}

/// Integrate `P(W <= b)` on one shifted lattice.
fn lattice_estimate(o: &Ordered, gen: &[f64], shift: &[f64], points: usize) -> f64 {
    let k = o.b.len();
    let e1 = norm_cdf(o.b[0] / o.l[(0, 0)]);
    if k == 1 {
        return e1;
    }
    let mut y = vec![0.0; k];
    let mut total = 0.0;
    for n in 1..=points {
        let mut e = e1;
        let mut f = e1;
        for i in 1..k {
            let x = (n as f64 * gen[i - 1] + shift[i - 1]).fract();
            let w = 1.0 - (2.0 * x - 1.0).abs();
            y[i - 1] = norm_quantile((w * e).clamp(1e-300, 1.0 - 1e-16));
            let t: f64 = (0..i).map(|m| o.l[(i, m)] * y[m]).sum();
            e = norm_cdf((o.b[i] - t) / o.l[(i, i)]);
            f *= e;
            if f == 0.0 {
                break;
            }
        }
        total += f;
    }
    total / points as f64
}

/// `P(X_j > lower_j for all j)` for `X ~ N(0, sigma)`.
pub fn mvn_survivor(lower: &[f64], sigma: &DMatrix<f64>) -> Result<MvnProbResult> {
    mvn_survivor_with(lower, sigma, &QmcOptions::default())
}

pub fn mvn_survivor_with(lower: &[f64], sigma: &DMatrix<f64>, opts: &QmcOptions) -> Result<MvnProbResult> {
    let estimates = match survivor_shifts(lower, sigma, opts)? {
        ShiftEstimates::Exact(v) => return Ok(MvnProbResult::exact(v)),
        ShiftEstimates::Random(e) => e,
    };
    let m = estimates.len() as f64;
    let value = estimates.iter().sum::<f64>() / m;
    let var = estimates.iter().map(|e| (e - value).powi(2)).sum::<f64>() / (m - 1.0);
    let est_error = (var / m).sqrt();
    Ok(MvnProbResult {
        value: value.clamp(0.0, 1.0),
        est_error,
        n_points: opts.points * estimates.len(),
        within_tolerance: est_error <= opts.target_error,
    })
}

/// Survivor probability either in closed form or as one estimate per
/// random shift. The shifts depend only on `opts.seed`, so repeated calls
/// share random numbers.
pub enum ShiftEstimates {
    Exact(f64),
    Random(Vec<f64>),
}

pub fn survivor_shifts(lower: &[f64], sigma: &DMatrix<f64>, opts: &QmcOptions) -> Result<ShiftEstimates> {
    let k = lower.len();
    if k == 0 || sigma.nrows() != k || sigma.ncols() != k {
        return Err(Error::Domain("bounds and covariance dimensions disagree".into()));
    }
    if lower.iter().any(|a| a.is_nan()) {
        return Err(Error::Domain("NaN lower bound".into()));
    }
    if lower.iter().any(|&a| a == f64::INFINITY) {
        return Ok(ShiftEstimates::Exact(0.0));
    }
    let keep: Vec<usize> = (0..k).filter(|&i| lower[i] > f64::NEG_INFINITY).collect();
    if keep.is_empty() {
        return Ok(ShiftEstimates::Exact(1.0));
    }
    let mut sub = DMatrix::from_fn(keep.len(), keep.len(), |a, b| sigma[(keep[a], keep[b])]);
    if keep.len() == 1 {
        if !(sub[(0, 0)] > 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        return Ok(ShiftEstimates::Exact(norm_sf(lower[keep[0]] / sub[(0, 0)].sqrt())));
    }
    cholesky(&sub)?;
    if min_eigenvalue(&sub) < NEAR_SINGULAR {
        let d: Vec<f64> = (0..keep.len()).map(|i| sub[(i, i)].sqrt()).collect();
        let corr = DMatrix::from_fn(keep.len(), keep.len(), |i, j| sub[(i, j)] / (d[i] * d[j]));
        let fixed = nearest_pd(&corr);
        sub = DMatrix::from_fn(keep.len(), keep.len(), |i, j| fixed[(i, j)] * d[i] * d[j]);
    }
    // P(X > a) = P(-X < -a) and -X has the same covariance
    let b: Vec<f64> = keep.iter().map(|&i| -lower[i]).collect();
    let o = reorder(&sub, &b)?;
    let estimates = shift_estimates(&o, opts);
    Ok(ShiftEstimates::Random(estimates))
}
