//! Simulation study on symmetric logistic data: how well do different
//! residual models recover the known joint exceedance probability
//! `gamma_d = P(U_i > p for all i)`?
//!
//! Margins are known to be uniform and map straight to Laplace. Each
//! replicate fits the regression (or fixes `alpha = 1, beta = 0`, the
//! limiting values for this model), fits the chosen residual law on the
//! exceedances of site 1 and estimates `gamma_d` by conditional simulation.

use crate::data::Dataset;
use crate::dependence::{dependence_threshold, fit_exceedances, fixed_regression, residuals_of, ConditionalFit, Exceedances};
use crate::error::{Error, Result};
use crate::logistic::{logistic_sample, logistic_true_gamma, LogisticSpec};
use crate::margins::to_laplace;
use crate::residual_copula::{fit_mvkde, fit_residual_model, EmpiricalResiduals, ResidualLaw};
use crate::rng::{derive_seed, substream};
use crate::simulate::ConditionalSampler;
use crate::stats::{mean, percentile, sd};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualMethod {
    Empirical,
    Mvkde,
    GaussianCopula,
}

impl ResidualMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Empirical => "empirical",
            Self::Mvkde => "mvkde",
            Self::GaussianCopula => "gaussian_copula",
        }
    }
}

impl std::str::FromStr for ResidualMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(Self::Empirical),
            "mvkde" => Ok(Self::Mvkde),
            "gaussian_copula" | "gaussian-copula" => Ok(Self::GaussianCopula),
            _ => Err(Error::Config(format!("unknown residual method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyConfig {
    pub d: usize,
    pub delta: f64,
    pub n: usize,
    pub p_levels: Vec<f64>,
    pub dependence_quantile: f64,
    pub method: ResidualMethod,
    pub known_regression: bool,
    pub n_reps: usize,
    pub n_boot: usize,
    /// Conditional draws per probability estimate.
    pub n_mc: usize,
    pub ci_level: f64,
    pub seed: u64,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        Self {
            d: 5,
            delta: 0.75,
            n: 5000,
            p_levels: vec![0.99, 0.998, 0.999],
            dependence_quantile: 0.98,
            method: ResidualMethod::GaussianCopula,
            known_regression: true,
            n_reps: 25,
            n_boot: 250,
            n_mc: 100_000,
            ci_level: 0.95,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub n_v: usize,
    /// Estimates of `gamma_d`, one per probability level.
    pub estimates: Vec<f64>,
    /// Bootstrap percentile bounds per level, when bootstrapping.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyRow {
    pub p: f64,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    /// Mean over replicates of the bootstrap percentile bounds.
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyReport {
    pub config: SimStudyConfig,
    pub refit_in_bootstrap: Vec<String>,
    pub rows: Vec<SimStudyRow>,
    pub replicates: Vec<ReplicateResult>,
}

enum Law {
    Copula(crate::residual_copula::ResidualModel),
    Empirical(EmpiricalResiduals),
    Mvkde(crate::residual_copula::MvkdeModel),
}

fn fit_regression(exc: &Exceedances, known: bool) -> Result<ConditionalFit> {
    if known {
        let k = exc.others.len();
        fixed_regression(exc, &vec![1.0; k], &vec![0.0; k])
    } else {
        Ok(fit_exceedances(exc))
    }
}

fn fit_law(method: ResidualMethod, fit: &ConditionalFit, exc: &Exceedances) -> Result<Law> {
    let rs = residuals_of(fit, exc);
    Ok(match method {
        ResidualMethod::GaussianCopula => Law::Copula(fit_residual_model(&rs, None)?),
        ResidualMethod::Empirical => Law::Empirical(EmpiricalResiduals::fit(&rs)?),
        ResidualMethod::Mvkde => Law::Mvkde(fit_mvkde(&rs)?),
    })
}

/// `P(Y_1 > v_p) * P(all other Y_i > v_p | Y_1 > v_p)` by simulation.
pub fn conditional_joint_estimate<L: ResidualLaw>(fit: &ConditionalFit, law: &L, p: f64, n_mc: usize, seed: u64) -> Result<f64> {
    let level = to_laplace(p)?;
    let sampler = ConditionalSampler::new(fit, law)?;
    let ev = sampler.sample(level, n_mc, seed);
    let hits = (0..n_mc)
        .filter(|&r| fit.others.iter().all(|&s| ev[(r, s)] > level))
        .count();
    Ok((1.0 - p) * hits as f64 / n_mc as f64)
}

fn estimates_for(law: &Law, fit: &ConditionalFit, levels: &[f64], n_mc: usize, seed: u64) -> Result<Vec<f64>> {
    levels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let s = derive_seed(seed, i as u64);
            match law {
                Law::Copula(l) => conditional_joint_estimate(fit, l, p, n_mc, s),
                Law::Empirical(l) => conditional_joint_estimate(fit, l, p, n_mc, s),
                Law::Mvkde(l) => conditional_joint_estimate(fit, l, p, n_mc, s),
            }
        })
        .collect()
}

/// Laplace-scale dataset from a sample with uniform margins.
pub fn uniform_to_laplace(u: &nalgebra::DMatrix<f64>) -> Result<Dataset> {
    let y = u.map(|x| to_laplace(x).unwrap_or(f64::NAN));
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("uniform value outside (0, 1)".into()));
    }
    Dataset::complete(y)
}

fn run_replicate(cfg: &SimStudyConfig, r: usize) -> Result<ReplicateResult> {
    let spec = LogisticSpec::new(cfg.d, cfg.delta)?;
    let seed = derive_seed(cfg.seed, r as u64);
    let u = logistic_sample(&spec, cfg.n, derive_seed(seed, 0))?;
    let yl = uniform_to_laplace(&u)?;
    let v = dependence_threshold(cfg.dependence_quantile)?;
    let exc = Exceedances::from_dataset(&yl, 0, v)?;
    let fit = fit_regression(&exc, cfg.known_regression)?;
    let law = fit_law(cfg.method, &fit, &exc)?;
    let estimates = estimates_for(&law, &fit, &cfg.p_levels, cfg.n_mc, derive_seed(seed, 1))?;

    let (mut lower, mut upper) = (Vec::new(), Vec::new());
    if cfg.n_boot > 0 {
        let boot_seed = derive_seed(seed, 2);
        let reps: Vec<Result<Vec<f64>>> = (0..cfg.n_boot)
            .into_par_iter()
            .map(|b| {
                let mut rng = substream(boot_seed, b as u64);
                let idx: Vec<usize> = (0..exc.n_v()).map(|_| rng.random_range(0..exc.n_v())).collect();
                let eb = exc.select(&idx);
                let fb = fit_regression(&eb, cfg.known_regression)?;
                let lb = fit_law(cfg.method, &fb, &eb)?;
                estimates_for(&lb, &fb, &cfg.p_levels, cfg.n_mc, derive_seed(boot_seed, b as u64 + 1))
            })
            .collect();
        let ok: Vec<Vec<f64>> = reps.into_iter().filter_map(|x| x.ok()).collect();
        if (ok.len() as f64) < 0.8 * cfg.n_boot as f64 {
            return Err(Error::Numerical(format!(
                "replicate {r}: {} of {} bootstrap fits failed",
                cfg.n_boot - ok.len(),
                cfg.n_boot
            )));
        }
        let a = 0.5 * (1.0 - cfg.ci_level);
        for i in 0..cfg.p_levels.len() {
            let col: Vec<f64> = ok.iter().map(|e| e[i]).collect();
            lower.push(percentile(&col, a));
            upper.push(percentile(&col, 1.0 - a));
        }
    }
    Ok(ReplicateResult {
        replicate: r,
        n_v: exc.n_v(),
        estimates,
        lower,
        upper,
    })
}

pub fn simstudy(cfg: &SimStudyConfig) -> Result<SimStudyReport> {
    let spec = LogisticSpec::new(cfg.d, cfg.delta)?;
    if cfg.n_reps == 0 || cfg.n_mc == 0 {
        return Err(Error::Config("n_reps and n_mc must be positive".into()));
    }
    for &p in &cfg.p_levels {
        if !(p >= cfg.dependence_quantile && p < 1.0) {
            return Err(Error::Config(format!(
                "p = {p} must lie in [dependence quantile, 1)"
            )));
        }
    }
    let replicates = (0..cfg.n_reps)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r))
        .collect::<Result<Vec<_>>>()?;
    let rows = cfg
        .p_levels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let est: Vec<f64> = replicates.iter().map(|r| r.estimates[i]).collect();
            let (ci_lower, ci_upper) = if cfg.n_boot > 0 {
                (
                    Some(mean(&replicates.iter().map(|r| r.lower[i]).collect::<Vec<_>>())),
                    Some(mean(&replicates.iter().map(|r| r.upper[i]).collect::<Vec<_>>())),
                )
            } else {
                (None, None)
            };
            Ok(SimStudyRow {
                p,
                truth: logistic_true_gamma(&spec, p)?,
                mean: mean(&est),
                sd: if est.len() > 1 { sd(&est) } else { 0.0 },
                ci_lower,
                ci_upper,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut refit = vec!["residual model".to_string()];
    if !cfg.known_regression {
        refit.insert(0, "regression".to_string());
    }
    Ok(SimStudyReport {
        config: cfg.clone(),
        refit_in_bootstrap: refit,
        rows,
        replicates,
    })
}

impl SimStudyReport {
    /// CSV with probabilities scaled by 1000.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,known_regression,d,p,truth_x1000,mean_x1000,sd_x1000,ci_lower_x1000,ci_upper_x1000\n");
        let f = |x: Option<f64>| x.map_or("NA".to_string(), |v| format!("{:.6}", 1000.0 * v));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.6},{},{}",
                self.config.method.name(),
                self.config.known_regression,
                self.config.d,
                r.p,
                1000.0 * r.truth,
                1000.0 * r.mean,
                1000.0 * r.sd,
                f(r.ci_lower),
                f(r.ci_upper)
            );
        }
        s
    }

    pub fn to_pretty(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "d = {}, delta = {}, n = {}, {} replicates, residual method: {}, regression: {}",
            c.d,
            c.delta,
            c.n,
            c.n_reps,
            c.method.name(),
            if c.known_regression { "fixed at alpha = 1, beta = 0" } else { "estimated" }
        );
        if c.n_boot > 0 {
            let _ = writeln!(
                s,
                "{:.0}% intervals: mean over replicates of bootstrap percentile bounds (B = {}, resampling exceedance rows; refit: {})",
                100.0 * c.ci_level,
                c.n_boot,
                self.refit_in_bootstrap.join(", ")
            );
        }
        let _ = writeln!(s, "{:>8} {:>10} {:>24}", "p", "1000*true", "1000*estimate");
        for r in &self.rows {
            let est = match (r.ci_lower, r.ci_upper) {
                (Some(l), Some(u)) => format!("{:.2} ({:.2},{:.2})", 1000.0 * r.mean, 1000.0 * l, 1000.0 * u),
                _ => format!("{:.2}", 1000.0 * r.mean),
            };
            let _ = writeln!(s, "{:>8} {:>10.2} {:>24}", r.p, 1000.0 * r.truth, est);
        }
        s
    }
}
