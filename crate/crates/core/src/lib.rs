//! Semi-parametric conditional extreme value modelling.
//!
//! The pipeline transforms each site to Laplace margins through a kernel body
//! and generalised Pareto tail, fits the conditional regression
//! `Y_{-j} = alpha Y_j + Y_j^beta Z` above a dependence threshold for every
//! conditioning site `j`, and models the residuals `Z` with kernel-smoothed
//! margins joined by a Gaussian copula whose correlation matrix is estimated
//! from pairwise-complete observations. Fitted models simulate extreme events
//! and estimate joint tail probabilities.

pub mod bootstrap;
pub mod config;
pub mod data;
pub mod dependence;
pub mod error;
pub mod gof;
pub mod jointprob;
pub mod kde;
pub mod logistic;
pub mod margins;
pub mod model;
pub mod mvn;
pub mod optim;
pub mod residual_copula;
pub mod rng;
pub mod simstudy;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
