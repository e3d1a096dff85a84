//! Run configuration shared by the library workflow and the command line.

use crate::error::{Error, Result};
use crate::mvn::QmcOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub marginal_threshold_quantile: f64,
    pub dependence_quantile: f64,
    /// Events simulated per conditional probability estimate.
    pub n_sim: usize,
    /// Draws per conditional when estimating which site is the largest.
    pub n_mc_argmax: usize,
    pub n_boot: usize,
    pub ci_level: f64,
    pub gof_reps: usize,
    /// Correlation used for residual pairs never observed together. Without
    /// it such pairs are an error.
    pub missing_pair_correlation: Option<f64>,
    pub qmc_points: usize,
    pub qmc_shifts: usize,
    pub qmc_target_error: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            marginal_threshold_quantile: 0.95,
            dependence_quantile: 0.98,
            n_sim: 100_000,
            n_mc_argmax: 100_000,
            n_boot: 250,
            ci_level: 0.95,
            gof_reps: 999,
            missing_pair_correlation: None,
            qmc_points: 1 << 13,
            qmc_shifts: 8,
            qmc_target_error: 1e-6,
        }
    }
}

fn open_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {x} must lie in (0, 1)")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        open_unit("marginal_threshold_quantile", self.marginal_threshold_quantile)?;
        open_unit("dependence_quantile", self.dependence_quantile)?;
        open_unit("ci_level", self.ci_level)?;
        if self.dependence_quantile < self.marginal_threshold_quantile {
            return Err(Error::Config(
                "dependence_quantile must be at least marginal_threshold_quantile".into(),
            ));
        }
        // the Laplace-scale dependence threshold must be positive
        if self.dependence_quantile <= 0.5 {
            return Err(Error::Config("dependence_quantile must exceed 0.5".into()));
        }
        if let Some(rho) = self.missing_pair_correlation {
            if !(-1.0..=1.0).contains(&rho) {
                return Err(Error::Config(format!("missing_pair_correlation = {rho} outside [-1, 1]")));
            }
        }
        if self.n_sim == 0 || self.n_mc_argmax == 0 {
            return Err(Error::Config("Monte Carlo sizes must be positive".into()));
        }
        if self.qmc_points == 0 || self.qmc_shifts < 2 {
            return Err(Error::Config("QMC needs points > 0 and at least 2 shifts".into()));
        }
        Ok(())
    }

    pub fn qmc(&self, seed: u64) -> QmcOptions {
        QmcOptions {
            points: self.qmc_points,
            shifts: self.qmc_shifts,
            target_error: self.qmc_target_error,
            seed,
        }
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
