#![allow(dead_code)]

use condex::data::Dataset;
use condex::dependence::ConditionalFit;
use condex::kde::KernelCdf;
use condex::logistic::{logistic_sample, LogisticSpec};
use condex::margins::fit_marginal;
use condex::model::{CondExModel, FitReport, SiteModel, MODEL_SCHEMA};
use condex::mvn::mvn_sample;
use condex::residual_copula::ResidualModel;
use condex::rng::substream;
use condex::stats::norm_cdf;
use nalgebra::DMatrix;
use rand::Rng;

/// Gumbel margins with site-specific location and scale.
pub fn gumbel(u: f64, site: usize) -> f64 {
    (10.0 + site as f64) - (2.0 + 0.1 * site as f64) * (-u.ln()).ln()
}

pub fn native_dataset(u: &DMatrix<f64>) -> Dataset {
    let x = DMatrix::from_fn(u.nrows(), u.ncols(), |r, c| gumbel(u[(r, c)], c));
    Dataset::complete(x).unwrap()
}

pub fn exchangeable(d: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { rho })
}

/// Gaussian copula sample on uniform margins.
pub fn gaussian_uniform(d: usize, n: usize, rho: f64, seed: u64) -> DMatrix<f64> {
    mvn_sample(&exchangeable(d, rho), n, seed).unwrap().map(norm_cdf)
}

pub fn gaussian_dataset(d: usize, n: usize, rho: f64, seed: u64) -> Dataset {
    native_dataset(&gaussian_uniform(d, n, rho, seed))
}

pub fn logistic_dataset(d: usize, delta: f64, n: usize, seed: u64) -> Dataset {
    let u = logistic_sample(&LogisticSpec::new(d, delta).unwrap(), n, seed).unwrap();
    native_dataset(&u)
}

/// Mask one random cell in every row and each other cell with
/// probability `extra`, so no row is complete.
pub fn drop_cells(ds: &Dataset, extra: f64, seed: u64) -> Dataset {
    let mut rng = substream(seed, 0);
    let (n, d) = (ds.n_rows(), ds.n_sites());
    let mut mask = DMatrix::from_element(n, d, true);
    for r in 0..n {
        let forced = rng.random_range(0..d);
        for c in 0..d {
            if c == forced || rng.random::<f64>() < extra {
                mask[(r, c)] = false;
            }
        }
        // keep at least one observation per row
        if (0..d).all(|c| !mask[(r, c)]) {
            mask[(r, (forced + 1) % d)] = true;
        }
    }
    ds.with_mask(mask).unwrap()
}

/// Hand-built model: every conditional uses the same regression
/// parameters and residual law. Margins are fitted to a Gumbel sample.
pub fn manual_model(d: usize, alpha: f64, beta: f64, residual: KernelCdf, rho: f64) -> CondExModel {
    let mut rng = substream(991, 0);
    let margins = (0..d)
        .map(|s| {
            let x: Vec<f64> = (0..2000).map(|_| gumbel(rng.random::<f64>(), s)).collect();
            fit_marginal(&x, 0.95).unwrap()
        })
        .collect();
    let k = d - 1;
    let conditionals = (0..d)
        .map(|j| {
            let others: Vec<usize> = (0..d).filter(|&i| i != j).collect();
            let fit = ConditionalFit {
                cond_index: j,
                others,
                v: condex::margins::to_laplace(0.98).unwrap(),
                alpha: vec![alpha; k],
                beta: vec![beta; k],
                mu: vec![0.0; k],
                sigma_res: vec![1.0; k],
                n_v: 100,
                fallback: vec![],
            };
            let sigma = exchangeable(k, rho);
            let residuals = ResidualModel::from_parts(
                vec![residual.clone(); k],
                sigma.clone(),
                sigma,
                DMatrix::from_element(k, k, 100),
            )
            .unwrap();
            Some(SiteModel { fit, residuals })
        })
        .collect();
    CondExModel {
        schema: MODEL_SCHEMA.to_string(),
        site_ids: (1..=d).map(|i| format!("s{i}")).collect(),
        marginal_threshold_quantile: 0.95,
        dependence_quantile: 0.98,
        margins,
        conditionals,
        report: FitReport {
            config_hash: String::new(),
            sites: vec![],
        },
    }
}

/// Standard Laplace quantiles at plotting positions, as kernel points.
pub fn laplace_points(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| condex::margins::to_laplace((i as f64 + 0.5) / n as f64).unwrap())
        .collect()
}
