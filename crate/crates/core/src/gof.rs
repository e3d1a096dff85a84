//! Goodness-of-fit test for the Gaussian copula with missing components.
//!
//! Each residual row contributes its squared Mahalanobis distance over the
//! observed components, `T_i`, which is chi-square with `d_i` degrees of
//! freedom under the null. The standardised sum
//! `T* = n^{-1/2} sum (T_i - d_i) / sqrt(2 d_i)` is compared with Monte Carlo
//! replicates that reuse the observed missingness pattern row by row.

use crate::error::{Error, Result};
use crate::mvn::cholesky;
use crate::residual_copula::MaskedMatrix;
use crate::rng::substream;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const MIN_NULL_REPS: usize = 99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub t_star: f64,
    pub p_value: f64,
    pub n_v: usize,
    pub n_null_reps: usize,
    pub null_samples: Vec<f64>,
}

/// Lower Cholesky factors of the correlation submatrices, one per
/// distinct missingness pattern.
struct PatternCache {
    observed: Vec<Vec<usize>>,
    factors: Vec<DMatrix<f64>>,
    row_pattern: Vec<usize>,
}

impl PatternCache {
    fn new(mask: &DMatrix<bool>, sigma: &DMatrix<f64>) -> Result<Self> {
        let mut index: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut observed = Vec::new();
        let mut factors = Vec::new();
        let mut row_pattern = Vec::new();
        for r in 0..mask.nrows() {
            let pattern: Vec<bool> = mask.row(r).iter().copied().collect();
            if !pattern.iter().any(|&b| b) {
                continue;
            }
            let id = match index.get(&pattern) {
                Some(&id) => id,
                None => {
                    let obs: Vec<usize> = (0..pattern.len()).filter(|&c| pattern[c]).collect();
                    let sub = DMatrix::from_fn(obs.len(), obs.len(), |a, b| sigma[(obs[a], obs[b])]);
                    factors.push(cholesky(&sub)?);
                    observed.push(obs);
                    index.insert(pattern, observed.len() - 1);
                    observed.len() - 1
                }
            };
            row_pattern.push(id);
        }
        Ok(Self {
            observed,
            factors,
            row_pattern,
        })
    }
}

/// `z' L^{-T} L^{-1} z` by forward substitution.
fn quadratic_form(l: &DMatrix<f64>, z: &[f64]) -> f64 {
    let k = z.len();
    let mut w = vec![0.0; k];
    let mut t = 0.0;
    for i in 0..k {
        let s: f64 = (0..i).map(|j| l[(i, j)] * w[j]).sum();
        w[i] = (z[i] - s) / l[(i, i)];
        t += w[i] * w[i];
    }
    t
}

/// Squared Mahalanobis distance over the observed components of one row,
/// with the number of observed components.
pub fn t_row(zn_row: &[f64], mask_row: &[bool], sigma_tilde: &DMatrix<f64>) -> Result<(f64, usize)> {
    let obs: Vec<usize> = (0..zn_row.len()).filter(|&c| mask_row[c]).collect();
    if obs.is_empty() {
        return Err(Error::Domain("row has no observed components".into()));
    }
    let sub = DMatrix::from_fn(obs.len(), obs.len(), |a, b| sigma_tilde[(obs[a], obs[b])]);
    let z: Vec<f64> = obs.iter().map(|&c| zn_row[c]).collect();
    Ok((quadratic_form(&cholesky(&sub)?, &z), obs.len()))
}

/// Standardised aggregate of `(T_i, d_i)` pairs.
pub fn t_star_from_rows(rows: &[(f64, usize)]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no rows with observed components".into()));
    }
    let s: f64 = rows
        .iter()
        .map(|&(t, d)| (t - d as f64) / (2.0 * d as f64).sqrt())
        .sum();
    Ok(s / (rows.len() as f64).sqrt())
}

fn t_star_cached(values: &DMatrix<f64>, cache: &PatternCache, rows: &[usize]) -> f64 {
    let terms: Vec<(f64, usize)> = rows
        .iter()
        .zip(&cache.row_pattern)
        .map(|(&r, &p)| {
            let obs = &cache.observed[p];
            let z: Vec<f64> = obs.iter().map(|&c| values[(r, c)]).collect();
            (quadratic_form(&cache.factors[p], &z), obs.len())
        })
        .collect();
    t_star_from_rows(&terms).unwrap_or(f64::NAN)
}

fn usable_rows(mask: &DMatrix<bool>) -> Vec<usize> {
    (0..mask.nrows()).filter(|&r| mask.row(r).iter().any(|&b| b)).collect()
}

/// `T*` over all rows with at least one observed component.
pub fn t_star(zn: &MaskedMatrix, sigma_tilde: &DMatrix<f64>) -> Result<f64> {
    let rows = usable_rows(&zn.mask);
    if rows.is_empty() {
        return Err(Error::InsufficientData("no rows with observed components".into()));
    }
    let cache = PatternCache::new(&zn.mask, sigma_tilde)?;
    Ok(t_star_cached(&zn.values, &cache, &rows))
}

/// One-sided Monte Carlo test: large `T*` is evidence against the model.
/// The plug-in correlation is treated as known in the null replicates.
pub fn gaussianity_test(zn: &MaskedMatrix, sigma_tilde: &DMatrix<f64>, n_reps: usize, seed: u64) -> Result<GofResult> {
    if n_reps < MIN_NULL_REPS {
        return Err(Error::Config(format!("need at least {MIN_NULL_REPS} null replicates, got {n_reps}")));
    }
    let rows = usable_rows(&zn.mask);
    if rows.is_empty() {
        return Err(Error::InsufficientData("no rows with observed components".into()));
    }
    let cache = PatternCache::new(&zn.mask, sigma_tilde)?;
    let observed = t_star_cached(&zn.values, &cache, &rows);
    let l = cholesky(sigma_tilde)?;
    let k = zn.ncols();
    let nulls: Vec<f64> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, rep as u64);
            let mut sim = DMatrix::<f64>::zeros(zn.nrows(), k);
            let mut e = vec![0.0; k];
            for &r in &rows {
                for x in e.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
                for i in 0..k {
                    sim[(r, i)] = (0..=i).map(|j| l[(i, j)] * e[j]).sum();
                }
            }
            t_star_cached(&sim, &cache, &rows)
        })
        .collect();
    let exceed = nulls.iter().filter(|&&t| t >= observed).count();
    Ok(GofResult {
        t_star: observed,
        p_value: (1 + exceed) as f64 / (n_reps + 1) as f64,
        n_v: rows.len(),
        n_null_reps: n_reps,
        null_samples: nulls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_statistics() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(t_row(&[0.0; 3], &[true; 3], &id).unwrap(), (0.0, 3));
        assert_eq!(t_row(&[1.0; 3], &[true; 3], &id).unwrap(), (3.0, 3));
        assert_eq!(t_row(&[1.0; 3], &[true, false, true], &id).unwrap(), (2.0, 2));
        assert!(t_row(&[1.0; 3], &[false; 3], &id).is_err());
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let inv = s.clone().try_inverse().unwrap();
        let z = nalgebra::DVector::from_vec(vec![0.3, -1.2]);
        let direct = (z.transpose() * inv * &z)[(0, 0)];
        assert!((t_row(&[0.3, -1.2], &[true, true], &s).unwrap().0 - direct).abs() < 1e-12);
    }

    #[test]
    fn aggregate() {
        assert_eq!(t_star_from_rows(&[(2.0, 2), (3.0, 3)]).unwrap(), 0.0);
        let d = 4.0f64;
        assert!((t_star_from_rows(&[(d + (2.0 * d).sqrt(), 4)]).unwrap() - 1.0).abs() < 1e-15);
        assert!(t_star_from_rows(&[]).is_err());
    }

    #[test]
    fn row_permutation_invariance_and_reproducibility() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 1.0]);
        let x = crate::mvn::mvn_sample(&s, 60, 3).unwrap();
        let mask = DMatrix::from_fn(60, 3, |r, c| (r * 7 + c) % 4 != 0);
        let zn = MaskedMatrix { values: x.clone(), mask: mask.clone() };
        let perm: Vec<usize> = (0..60).rev().collect();
        let zp = MaskedMatrix {
            values: DMatrix::from_fn(60, 3, |r, c| x[(perm[r], c)]),
            mask: DMatrix::from_fn(60, 3, |r, c| mask[(perm[r], c)]),
        };
        let a = t_star(&zn, &s).unwrap();
        let b = t_star(&zp, &s).unwrap();
        assert!((a - b).abs() < 1e-12);
        let r1 = gaussianity_test(&zn, &s, 99, 8).unwrap();
        let r2 = gaussianity_test(&zn, &s, 99, 8).unwrap();
        assert_eq!(r1, r2);
        let exceed = r1.null_samples.iter().filter(|&&t| t >= r1.t_star).count();
        assert_eq!(r1.p_value, (1 + exceed) as f64 / 100.0);
        assert!(gaussianity_test(&zn, &s, 50, 8).is_err());
    }
}
