//! Fitted model: marginal transforms plus one conditional dependence model
//! per conditioning site, with JSON persistence.

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::dependence::{dependence_threshold, fit_exceedances, residuals_of, ConditionalFit, Exceedances};
use crate::error::{Error, Result};
use crate::margins::{fit_marginal, MarginalModel};
use crate::residual_copula::{fit_residual_model, ResidualModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_SCHEMA: &str = "condex-model/1";

/// Regression and residual model for one conditioning site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteModel {
    #[serde(flatten)]
    pub fit: ConditionalFit,
    pub residuals: ResidualModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteReport {
    pub site: String,
    /// `None` when the site fitted, otherwise the failure message.
    pub error: Option<String>,
    pub n_v: usize,
    /// Sites whose pair regression fell back to independence.
    pub fallback_pairs: Vec<String>,
    pub pd_repaired: bool,
    pub min_pair_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub config_hash: String,
    pub sites: Vec<SiteReport>,
}

impl FitReport {
    pub fn failed_sites(&self) -> Vec<&SiteReport> {
        self.sites.iter().filter(|s| s.error.is_some()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondExModel {
    pub schema: String,
    pub site_ids: Vec<String>,
    pub marginal_threshold_quantile: f64,
    pub dependence_quantile: f64,
    pub margins: Vec<MarginalModel>,
    /// Indexed by conditioning site; `None` for sites that failed to fit.
    pub conditionals: Vec<Option<SiteModel>>,
    pub report: FitReport,
}

impl CondExModel {
    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn site(&self, cond_index: usize) -> Result<&SiteModel> {
        self.conditionals
            .get(cond_index)
            .ok_or_else(|| Error::Domain(format!("site index {cond_index} out of range")))?
            .as_ref()
            .ok_or_else(|| Error::Fit(format!("no fitted model for site {}", self.site_ids[cond_index])))
    }

    pub fn site_index(&self, id: &str) -> Result<usize> {
        self.site_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::Domain(format!("unknown site {id}")))
    }

    /// Laplace-scale dependence threshold shared by all sites.
    pub fn dependence_threshold(&self) -> f64 {
        dependence_threshold(self.dependence_quantile).expect("validated at fit time")
    }

    pub fn to_laplace_dataset(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.site_ids() != self.site_ids.as_slice() {
            return Err(Error::Schema("dataset sites differ from the model's".into()));
        }
        ds.map_observed(|s, r| Ok(self.margins[s].to_laplace(r)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.schema != MODEL_SCHEMA {
            return Err(Error::Schema(format!("unsupported model schema {:?}", m.schema)));
        }
        let d = m.site_ids.len();
        if m.margins.len() != d || m.conditionals.len() != d {
            return Err(Error::Schema("model component counts disagree".into()));
        }
        for (j, c) in m.conditionals.iter().enumerate() {
            if let Some(c) = c {
                if c.fit.cond_index != j || c.fit.others.len() + 1 != d || c.residuals.margins.len() + 1 != d {
                    return Err(Error::Schema(format!("conditional model {j} is inconsistent")));
                }
            }
        }
        Ok(m)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fit the regression and residual copula for one conditioning site from
/// its exceedance set.
pub fn fit_site(exc: &Exceedances, missing_pair_correlation: Option<f64>) -> Result<SiteModel> {
    let fit = fit_exceedances(exc);
    let rs = residuals_of(&fit, exc);
    let residuals = fit_residual_model(&rs, missing_pair_correlation)?;
    Ok(SiteModel { fit, residuals })
}

pub fn fit_margins(ds: &Dataset, cfg: &RunConfig) -> Result<Vec<MarginalModel>> {
    let fits: Vec<Result<MarginalModel>> = (0..ds.n_sites())
        .into_par_iter()
        .map(|s| fit_marginal(&ds.observed_column(s), cfg.marginal_threshold_quantile))
        .collect();
    let mut margins = Vec::with_capacity(fits.len());
    let mut failures = Vec::new();
    for (s, f) in fits.into_iter().enumerate() {
        match f {
            Ok(m) => margins.push(m),
            Err(e) => failures.push(format!("{}: {e}", ds.site_ids()[s])),
        }
    }
    if failures.is_empty() {
        Ok(margins)
    } else {
        Err(Error::Fit(format!("marginal fits failed: {}", failures.join("; "))))
    }
}

/// Fit margins, then a conditional model for every site. When `partial` is
/// false any failed site is an error; otherwise failures are recorded in the
/// report and the site is left empty.
pub fn fit_model(ds: &Dataset, cfg: &RunConfig, partial: bool) -> Result<CondExModel> {
    cfg.validate()?;
    let margins = fit_margins(ds, cfg)?;
    let yl = ds.map_observed(|s, r| Ok(margins[s].to_laplace(r)))?;
    let v = dependence_threshold(cfg.dependence_quantile)?;
    let ids = ds.site_ids();
    let sites: Vec<(Option<SiteModel>, SiteReport)> = (0..ds.n_sites())
        .into_par_iter()
        .map(|j| {
            let result = Exceedances::from_dataset(&yl, j, v)
                .and_then(|exc| fit_site(&exc, cfg.missing_pair_correlation).map(|m| (exc.n_v(), m)));
            match result {
                Ok((n_v, m)) => {
                    let k = m.residuals.pair_counts.nrows();
                    let min_pair_count = (0..k)
                        .flat_map(|a| (0..k).map(move |b| (a, b)))
                        .map(|(a, b)| m.residuals.pair_counts[(a, b)])
                        .min()
                        .unwrap_or(0);
                    let report = SiteReport {
                        site: ids[j].clone(),
                        error: None,
                        n_v,
                        fallback_pairs: m.fit.fallback.iter().map(|&c| ids[m.fit.others[c]].clone()).collect(),
                        pd_repaired: m.residuals.repaired,
                        min_pair_count,
                    };
                    (Some(m), report)
                }
                Err(e) => (
                    None,
                    SiteReport {
                        site: ids[j].clone(),
                        error: Some(e.to_string()),
                        n_v: 0,
                        fallback_pairs: Vec::new(),
                        pd_repaired: false,
                        min_pair_count: 0,
                    },
                ),
            }
        })
        .collect();
    let (conditionals, reports): (Vec<_>, Vec<_>) = sites.into_iter().unzip();
    let report = FitReport {
        config_hash: cfg.hash(),
        sites: reports,
    };
    let failed = report.failed_sites();
    if !failed.is_empty() && !partial {
        let msg: Vec<String> = failed
            .iter()
            .map(|s| format!("{}: {}", s.site, s.error.as_deref().unwrap_or("")))
            .collect();
        return Err(Error::Fit(format!("conditional fits failed: {}", msg.join("; "))));
    }
    Ok(CondExModel {
        schema: MODEL_SCHEMA.to_string(),
        site_ids: ids.to_vec(),
        marginal_threshold_quantile: cfg.marginal_threshold_quantile,
        dependence_quantile: cfg.dependence_quantile,
        margins,
        conditionals,
        report,
    })
}
