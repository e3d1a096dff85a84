//! Symmetric multivariate extreme value logistic distribution, used as a
//! benchmark with known joint tail probabilities.
//!
//! On Fréchet margins `G(z) = exp(-(sum z_i^{-1/delta})^delta)`. An exact
//! sampler takes `Z_i = (S / E_i)^delta` with `E_i ~ Exp(1)` and `S`
//! positive stable with Laplace transform `exp(-t^delta)`.

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::stats::compensated_sum;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const BATCH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticSpec {
    pub d: usize,
    pub delta: f64,
}

impl LogisticSpec {
    pub fn new(d: usize, delta: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::Domain(format!("dimension {d} must be at least 2")));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Domain(format!("delta = {delta} must lie in (0, 1]")));
        }
        Ok(Self { d, delta })
    }
}

/// Positive stable variate with `E exp(-tS) = exp(-t^delta)` (Kanter's
/// representation).
pub fn positive_stable<R: Rng + ?Sized>(rng: &mut R, delta: f64) -> f64 {
    if delta == 1.0 {
        return 1.0;
    }
    let u: f64 = PI * rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let a = (delta * u).sin() / u.sin().powf(1.0 / delta);
    let b = ((1.0 - delta) * u).sin() / e;
    a * b.powf((1.0 - delta) / delta)
}

/// `n` draws with uniform margins, one per row.
pub fn logistic_sample(spec: &LogisticSpec, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    let spec = LogisticSpec::new(spec.d, spec.delta)?;
    let d = spec.d;
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let rows = BATCH.min(n - b * BATCH);
            let mut out = Vec::with_capacity(rows * d);
            for _ in 0..rows {
                let s = positive_stable(&mut rng, spec.delta);
                for _ in 0..d {
                    let e: f64 = Exp1.sample(&mut rng);
                    // U = exp(-1/Z) with Z = (S/E)^delta
                    let inv_z = (e / s).powf(spec.delta);
                    out.push((-inv_z).exp());
                }
            }
            out
        })
        .collect();
    Ok(DMatrix::from_row_slice(n, d, &chunks.concat()))
}

/// `P(U_i > p for all i)` by inclusion-exclusion:
/// `sum_m C(d, m) (-1)^m p^{m^delta}`. The signed binomials sum to zero, so
/// each term is evaluated as `p^{m^delta} - 1` to limit cancellation.
pub fn logistic_true_gamma(spec: &LogisticSpec, p: f64) -> Result<f64> {
    let spec = LogisticSpec::new(spec.d, spec.delta)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p = {p} must lie in (0, 1)")));
    }
    if spec.delta == 1.0 {
        // independence: the alternating sum collapses to a product
        return Ok((1.0 - p).powi(spec.d as i32));
    }
    let ln_p = p.ln();
    let mut binom = 1.0f64;
    let terms = (0..=spec.d).map(|m| {
        if m > 0 {
            binom = binom * (spec.d - m + 1) as f64 / m as f64;
        }
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        sign * binom * ((m as f64).powf(spec.delta) * ln_p).exp_m1()
    });
    Ok(compensated_sum(terms.collect::<Vec<_>>()))
}

/// Empirical `chi_C(p)`: rows with every column of `subset` above `p`,
/// divided by `n (1 - p)`.
pub fn estimate_chi(sample: &DMatrix<f64>, subset: &[usize], p: f64) -> Result<f64> {
    if subset.len() < 2 {
        return Err(Error::Domain("subset needs at least two columns".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("p = {p} must lie in (0, 1)")));
    }
    if let Some(&c) = subset.iter().find(|&&c| c >= sample.ncols()) {
        return Err(Error::Domain(format!("column {c} out of range")));
    }
    let n = sample.nrows();
    let hits = (0..n)
        .filter(|&r| subset.iter().all(|&c| sample[(r, c)] > p))
        .count();
    Ok(hits as f64 / (n as f64 * (1.0 - p)))
}
