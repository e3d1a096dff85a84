//! Bootstrap confidence intervals for risk measures.
//!
//! Intervals come from resampling the exceedance rows of the conditioning
//! site with replacement, refitting the regression and residual copula, and
//! recomputing the measure. Marginal transforms are held at their fitted
//! values.

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::dependence::{dependence_threshold, Exceedances};
use crate::error::{Error, Result};
use crate::jointprob::{joint_prob_integral_site, joint_prob_mc_site, IntegralOptions, JointEvent};
use crate::margins::to_laplace;
use crate::model::{fit_margins, fit_site, SiteModel};
use crate::rng::{derive_seed, substream};
use crate::simulate::tau_all_site;
use crate::stats::percentile;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Largest tolerated fraction of failed bootstrap refits.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

pub const BOOTSTRAP_PROCEDURE: &str = "nonparametric bootstrap: exceedance rows of the conditioning site resampled with \
replacement; regression and residual copula refitted; marginal transforms held fixed; percentile interval";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RiskMeasure {
    /// At least `m` other sites exceed their `p`-quantile given the
    /// conditioning site does.
    Tau { cond_site: usize, m: usize, p: f64 },
    /// All sites with a level exceed it; `None` leaves a site free.
    JointProb {
        cond_site: usize,
        p_levels: Vec<Option<f64>>,
        method: JointMethod,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMethod {
    MonteCarlo,
    Integral,
}

impl RiskMeasure {
    pub fn cond_site(&self) -> usize {
        match self {
            Self::Tau { cond_site, .. } | Self::JointProb { cond_site, .. } => *cond_site,
        }
    }

    pub fn label(&self, site_ids: &[String]) -> String {
        let id = |j: usize| site_ids.get(j).cloned().unwrap_or_else(|| j.to_string());
        match self {
            Self::Tau { cond_site, m, p } => format!("tau[m={m},p={p}|{}]", id(*cond_site)),
            Self::JointProb { cond_site, p_levels, method } => {
                let lv: Vec<String> = p_levels
                    .iter()
                    .map(|x| x.map_or("-".to_string(), |v| v.to_string()))
                    .collect();
                format!("joint[{}|{}|{:?}]", lv.join(","), id(*cond_site), method)
            }
        }
    }

    fn validate(&self, d: usize, dependence_quantile: f64) -> Result<()> {
        let j = self.cond_site();
        if j >= d {
            return Err(Error::Config(format!("conditioning site {j} out of range")));
        }
        match self {
            Self::Tau { m, p, .. } => {
                if *m < 1 || *m >= d {
                    return Err(Error::Config(format!("m = {m} must lie in 1..={}", d - 1)));
                }
                if !(*p >= dependence_quantile && *p < 1.0) {
                    return Err(Error::Config(format!("p = {p} must lie in [{dependence_quantile}, 1)")));
                }
            }
            Self::JointProb { p_levels, .. } => {
                if p_levels.len() != d {
                    return Err(Error::Config(format!("expected {d} levels, got {}", p_levels.len())));
                }
                match p_levels[j] {
                    Some(p) if p >= dependence_quantile && p < 1.0 => {}
                    _ => {
                        return Err(Error::Config(format!(
                            "conditioning level must lie in [{dependence_quantile}, 1)"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// Evaluate on one conditional model.
    pub fn evaluate(&self, site: &SiteModel, cfg: &RunConfig, seed: u64) -> Result<f64> {
        match self {
            Self::Tau { m, p, .. } => Ok(tau_all_site(site, *p, cfg.n_sim, seed)?[m - 1]),
            Self::JointProb {
                cond_site,
                p_levels,
                method,
            } => {
                let levels = p_levels
                    .iter()
                    .map(|x| match x {
                        Some(p) if *p > 0.0 => to_laplace(*p),
                        _ => Ok(f64::NEG_INFINITY),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let event = JointEvent {
                    cond_site: *cond_site,
                    levels,
                };
                match method {
                    JointMethod::MonteCarlo => Ok(joint_prob_mc_site(site, &event, cfg.n_sim, seed)?.estimate),
                    JointMethod::Integral => {
                        let opts = IntegralOptions {
                            qmc: cfg.qmc(seed),
                            ..IntegralOptions::default()
                        };
                        Ok(joint_prob_integral_site(site, &event, &opts)?.estimate)
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n_boot: usize,
    pub n_failed: usize,
    /// The percentile interval missed the point estimate and was extended
    /// to include it.
    pub widened: bool,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// Percentile bootstrap of `stat` over resampled exceedance sets.
pub fn bootstrap_exceedances<F>(
    exc: &Exceedances,
    missing_pair_correlation: Option<f64>,
    n_boot: usize,
    level: f64,
    seed: u64,
    stat: F,
) -> Result<Interval>
where
    F: Fn(&SiteModel, u64) -> Result<f64> + Sync,
{
    if n_boot == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("level {level} must lie in (0, 1)")));
    }
    let site = fit_site(exc, missing_pair_correlation)?;
    let sim_seed = derive_seed(seed, 0);
    let point = stat(&site, sim_seed)?;
    let resample_seed = derive_seed(seed, 1);
    let n_v = exc.n_v();
    let results: Vec<Result<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(resample_seed, b as u64);
            let idx: Vec<usize> = (0..n_v).map(|_| rng.random_range(0..n_v)).collect();
            let refit = fit_site(&exc.select(&idx), missing_pair_correlation)?;
            stat(&refit, derive_seed(sim_seed, b as u64 + 1))
        })
        .collect();
    let mut values = Vec::with_capacity(n_boot);
    let mut first_error = None;
    for r in results {
        match r {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(v) => {
                first_error.get_or_insert_with(|| format!("non-finite statistic {v}"));
            }
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let n_failed = n_boot - values.len();
    if n_failed as f64 > MAX_FAILED_FRACTION * n_boot as f64 {
        return Err(Error::Numerical(format!(
            "{n_failed} of {n_boot} bootstrap replicates failed; first failure: {}",
            first_error.unwrap_or_default()
        )));
    }
    let a = 0.5 * (1.0 - level);
    let (mut lower, mut upper) = (percentile(&values, a), percentile(&values, 1.0 - a));
    let widened = point < lower || point > upper;
    lower = lower.min(point);
    upper = upper.max(point);
    Ok(Interval {
        point,
        lower,
        upper,
        level,
        n_boot,
        n_failed,
        widened,
    })
}

/// Fit margins on `ds`, then bootstrap `measure` for its conditioning site.
pub fn bootstrap_ci(ds: &Dataset, cfg: &RunConfig, measure: &RiskMeasure, n_boot: usize, level: f64, seed: u64) -> Result<Interval> {
    cfg.validate()?;
    measure.validate(ds.n_sites(), cfg.dependence_quantile)?;
    let margins = fit_margins(ds, cfg)?;
    let yl = ds.map_observed(|s, r| Ok(margins[s].to_laplace(r)))?;
    let v = dependence_threshold(cfg.dependence_quantile)?;
    let exc = Exceedances::from_dataset(&yl, measure.cond_site(), v)?;
    bootstrap_exceedances(&exc, cfg.missing_pair_correlation, n_boot, level, seed, |site, s| {
        measure.evaluate(site, cfg, s)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub measure: RiskMeasure,
    pub label: String,
    #[serde(flatten)]
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub config_hash: String,
    pub config: RunConfig,
    pub seed: u64,
    pub bootstrap_procedure: String,
    pub estimates: Vec<RiskEstimate>,
    /// Wall-clock seconds per stage; excluded from reproducibility checks.
    pub timings: BTreeMap<String, f64>,
}

impl RiskReport {
    /// Estimate every measure with a bootstrap interval.
    pub fn compute(ds: &Dataset, cfg: &RunConfig, measures: &[RiskMeasure], seed: u64) -> Result<Self> {
        let mut estimates = Vec::with_capacity(measures.len());
        let mut timings = BTreeMap::new();
        for (i, m) in measures.iter().enumerate() {
            let start = std::time::Instant::now();
            let label = m.label(ds.site_ids());
            let interval = bootstrap_ci(ds, cfg, m, cfg.n_boot, cfg.ci_level, derive_seed(seed, i as u64))?;
            timings.insert(label.clone(), start.elapsed().as_secs_f64());
            estimates.push(RiskEstimate {
                measure: m.clone(),
                label,
                interval,
            });
        }
        Ok(Self {
            config_hash: cfg.hash(),
            config: cfg.clone(),
            seed,
            bootstrap_procedure: BOOTSTRAP_PROCEDURE.to_string(),
            estimates,
            timings,
        })
    }
}
