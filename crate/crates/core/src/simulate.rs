//! Simulation of extreme events from a fitted model.
//!
//! Conditionally on site `j` exceeding its marginal `p`-quantile, the
//! Laplace-scale value is `Y_j = v_p + E` with `E ~ Exp(1)` and
//! `v_p = -ln(2(1 - p))`; the other sites follow
//! `Y_{-j} = alpha Y_j + Y_j^beta Z` with `Z` drawn from the residual law.

use crate::dependence::ConditionalFit;
use crate::error::{Error, Result};
use crate::margins::laplace_upper_quantile;
use crate::model::{CondExModel, SiteModel};
use crate::residual_copula::ResidualLaw;
use crate::rng::{derive_seed, substream};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const BATCH: usize = 4096;
pub const MIN_ACCEPTANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Native,
    Laplace,
}

/// Simulated events, one per row, on Laplace margins.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSet {
    pub laplace: DMatrix<f64>,
    pub cond_site: Vec<usize>,
    pub p: f64,
    pub acceptance_rate: f64,
}

impl EventSet {
    pub fn len(&self) -> usize {
        self.cond_site.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cond_site.is_empty()
    }

    /// Events on the original measurement scale.
    pub fn native(&self, model: &CondExModel) -> DMatrix<f64> {
        let (n, d) = self.laplace.shape();
        let cols: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|s| (0..n).map(|r| model.margins[s].from_laplace(self.laplace[(r, s)])).collect())
            .collect();
        DMatrix::from_fn(n, d, |r, s| cols[s][r])
    }

    pub fn events(&self, model: &CondExModel, scale: Scale) -> DMatrix<f64> {
        match scale {
            Scale::Laplace => self.laplace.clone(),
            Scale::Native => self.native(model),
        }
    }

    pub fn cond_site_counts(&self, d: usize) -> Vec<usize> {
        let mut c = vec![0; d];
        for &j in &self.cond_site {
            c[j] += 1;
        }
        c
    }

    /// For each event, how many sites other than the conditioning one
    /// exceed the Laplace-scale level `v_p`.
    pub fn exceedance_counts(&self) -> Vec<usize> {
        let v = laplace_upper_quantile(self.p).expect("p validated");
        (0..self.len())
            .map(|r| {
                let j = self.cond_site[r];
                self.laplace
                    .row(r)
                    .iter()
                    .enumerate()
                    .filter(|&(s, &y)| s != j && y > v)
                    .count()
            })
            .collect()
    }
}

/// Draws from one conditional of a model, with any residual law.
pub struct ConditionalSampler<'a, L: ResidualLaw> {
    pub fit: &'a ConditionalFit,
    pub law: &'a L,
    pub d: usize,
}

impl<'a, L: ResidualLaw> ConditionalSampler<'a, L> {
    pub fn new(fit: &'a ConditionalFit, law: &'a L) -> Result<Self> {
        if law.dim() != fit.others.len() {
            return Err(Error::Domain("residual law dimension does not match the regression".into()));
        }
        Ok(Self {
            fit,
            law,
            d: fit.others.len() + 1,
        })
    }

    /// One Laplace-scale event with `Y_j > level` into `out` (length d).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, level: f64, z: &mut [f64], out: &mut [f64]) {
        self.law.sample(rng, z);
        let e: f64 = Exp1.sample(rng);
        let y1 = level + e;
        out[self.fit.cond_index] = y1;
        for (c, &s) in self.fit.others.iter().enumerate() {
            out[s] = self.fit.reconstruct(c, y1, z[c]);
        }
    }

    /// `n` events above `level` (Laplace scale) as a row-major matrix.
    pub fn sample(&self, level: f64, n: usize, seed: u64) -> DMatrix<f64> {
        let d = self.d;
        let chunks: Vec<Vec<f64>> = (0..n.div_ceil(BATCH))
            .into_par_iter()
            .map(|b| {
                let mut rng = substream(seed, b as u64);
                let rows = BATCH.min(n - b * BATCH);
                let mut out = vec![0.0; rows * d];
                let mut z = vec![0.0; d - 1];
                for r in 0..rows {
                    self.draw(&mut rng, level, &mut z, &mut out[r * d..(r + 1) * d]);
                }
                out
            })
            .collect();
        DMatrix::from_row_slice(n, d, &chunks.concat())
    }
}

/// Laplace level `v_p` for a simulation at marginal probability `p`; must
/// not lie below the fitted dependence threshold.
pub fn simulation_level(model: &CondExModel, p: f64) -> Result<f64> {
    let v_p = laplace_upper_quantile(p)?;
    if p < model.dependence_quantile {
        return Err(Error::Domain(format!(
            "p = {p} is below the fitted dependence quantile {}",
            model.dependence_quantile
        )));
    }
    Ok(v_p)
}

pub fn simulate_conditional(model: &CondExModel, cond_index: usize, p: f64, n: usize, seed: u64) -> Result<EventSet> {
    let level = simulation_level(model, p)?;
    let site = model.site(cond_index)?;
    let sampler = ConditionalSampler::new(&site.fit, &site.residuals)?;
    Ok(EventSet {
        laplace: sampler.sample(level, n, seed),
        cond_site: vec![cond_index; n],
        p,
        acceptance_rate: 1.0,
    })
}

/// Whether the conditioning site holds the largest Laplace value of a row.
fn is_max(row: &[f64], j: usize) -> bool {
    row.iter().all(|&y| y <= row[j])
}

/// `P(I^p = j)`: probability that site `j` is the largest given that some
/// site exceeds its `p`-quantile. Each conditional's chance of holding the
/// maximum is estimated by simulation; Laplace margins make the
/// exceedance probabilities equal, so these normalise directly.
pub fn estimate_argmax_probs(model: &CondExModel, p: f64, n_mc: usize, seed: u64) -> Result<Vec<f64>> {
    let d = model.n_sites();
    let mut r = Vec::with_capacity(d);
    for j in 0..d {
        let ev = simulate_conditional(model, j, p, n_mc, derive_seed(seed, j as u64))?;
        let hits = (0..ev.len())
            .filter(|&i| is_max(ev.laplace.row(i).transpose().as_slice(), j))
            .count();
        r.push(hits as f64 / n_mc as f64);
    }
    let total: f64 = r.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numerical(
            "no simulated event had its conditioning site as the maximum".into(),
        ));
    }
    Ok(r.iter().map(|x| x / total).collect())
}

/// Events conditional on at least one site exceeding its `p`-quantile. For
/// each event the conditioning site `j` is drawn from the argmax
/// distribution, then draws from conditional `j` are repeated until `j`
/// holds the maximum.
pub fn simulate_anywhere_extreme(model: &CondExModel, p: f64, n: usize, n_mc: usize, seed: u64) -> Result<EventSet> {
    let d = model.n_sites();
    let level = simulation_level(model, p)?;
    let probs = estimate_argmax_probs(model, p, n_mc, derive_seed(seed, u64::MAX))?;
    let samplers = (0..d)
        .map(|j| {
            let s = model.site(j)?;
            ConditionalSampler::new(&s.fit, &s.residuals)
        })
        .collect::<Result<Vec<_>>>()?;
    let cum: Vec<f64> = probs
        .iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect();

    let batches: Vec<Result<(Vec<f64>, Vec<usize>, usize)>> = (0..n.div_ceil(BATCH))
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let rows = BATCH.min(n - b * BATCH);
            let budget = (rows as f64 / MIN_ACCEPTANCE).ceil() as usize;
            let mut out = Vec::with_capacity(rows * d);
            let mut js = Vec::with_capacity(rows);
            let mut proposals = 0usize;
            let mut z = vec![0.0; d - 1];
            let mut y = vec![0.0; d];
            for _ in 0..rows {
                let u: f64 = rng.random();
                let j = cum.iter().position(|&c| u < c).unwrap_or(d - 1);
                loop {
                    proposals += 1;
                    if proposals > budget {
                        return Err(Error::Numerical(format!(
                            "acceptance rate fell below {MIN_ACCEPTANCE:e} (site {}, {proposals} proposals)",
                            model.site_ids[j]
                        )));
                    }
                    samplers[j].draw(&mut rng, level, &mut z, &mut y);
                    if is_max(&y, j) {
                        break;
                    }
                }
                out.extend_from_slice(&y);
                js.push(j);
            }
            Ok((out, js, proposals))
        })
        .collect();
    let mut events = Vec::with_capacity(n * d);
    let mut sites = Vec::with_capacity(n);
    let mut proposals = 0usize;
    for b in batches {
        let (rows, js, props) = b?;
        events.extend(rows);
        sites.extend(js);
        proposals += props;
    }
    Ok(EventSet {
        laplace: DMatrix::from_row_slice(n, d, &events),
        cond_site: sites,
        p,
        acceptance_rate: if proposals > 0 { n as f64 / proposals as f64 } else { 1.0 },
    })
}

/// `tau_{m,p}` for every `m = 1..d-1` from one simulated set, so the
/// estimates are non-increasing in `m` by construction.
pub fn tau_all(model: &CondExModel, cond_index: usize, p: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let ev = simulate_conditional(model, cond_index, p, n, seed)?;
    Ok(tau_from_events(&ev, model.n_sites()))
}

/// `tau_all` for a single conditional model. The caller checks that `p`
/// is at least the dependence quantile.
pub fn tau_all_site(site: &SiteModel, p: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let level = laplace_upper_quantile(p)?;
    let sampler = ConditionalSampler::new(&site.fit, &site.residuals)?;
    let ev = EventSet {
        laplace: sampler.sample(level, n, seed),
        cond_site: vec![site.fit.cond_index; n],
        p,
        acceptance_rate: 1.0,
    };
    Ok(tau_from_events(&ev, sampler.d))
}

pub fn tau_from_events(ev: &EventSet, d: usize) -> Vec<f64> {
    let counts = ev.exceedance_counts();
    let mut at_least = vec![0usize; d];
    for c in counts {
        at_least[c] += 1;
    }
    // suffix sums: number of events with count >= m
    for m in (0..d - 1).rev() {
        at_least[m] += at_least[m + 1];
    }
    (1..d).map(|m| at_least[m] as f64 / ev.len() as f64).collect()
}

/// Probability that, given the conditioning site exceeds its `p`-quantile,
/// at least `m` other sites exceed theirs.
pub fn tau_mp(model: &CondExModel, cond_index: usize, m: usize, p: f64, n: usize, seed: u64) -> Result<f64> {
    let d = model.n_sites();
    if m < 1 || m > d - 1 {
        return Err(Error::Domain(format!("m = {m} must lie in 1..={}", d - 1)));
    }
    Ok(tau_all(model, cond_index, p, n, seed)?[m - 1])
}
