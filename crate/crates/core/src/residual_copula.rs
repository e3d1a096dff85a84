//! Residual distribution: kernel-smoothed margins joined by a Gaussian
//! copula, estimated from partially observed residual vectors. Also the two
//! comparison laws (resampled residual rows and a multivariate kernel).

use crate::dependence::ResidualSample;
use crate::error::{Error, Result};
use crate::kde::KernelCdf;
use crate::mvn::cholesky;
use crate::stats::sd;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const MIN_MARGIN_POINTS: usize = 10;
pub const MIN_EIGENVALUE: f64 = 1e-8;
const MAX_REPAIR_ITERATIONS: usize = 100;

/// A law for residual vectors `Z` that can be sampled.
pub trait ResidualLaw: Sync {
    fn dim(&self) -> usize;
    /// Draw one residual vector into `out` (length `dim()`).
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]);
}

pub fn fit_kernel_margin(z: &[f64]) -> Result<KernelCdf> {
    KernelCdf::fit(z.to_vec(), MIN_MARGIN_POINTS)
}

pub fn kernel_quantile(k: &KernelCdf, p: f64) -> Result<f64> {
    k.quantile(p)
}

/// Matrix with a mask of observed cells; unobserved cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
}

impl MaskedMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn complete(values: DMatrix<f64>) -> Self {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self { values, mask }
    }
}

/// `Phi^{-1}(G_i(z_ij))` on observed cells.
pub fn to_gaussian_scale(rs: &ResidualSample, margins: &[KernelCdf]) -> MaskedMatrix {
    let values = DMatrix::from_fn(rs.rows.nrows(), rs.rows.ncols(), |r, c| {
        if rs.mask[(r, c)] {
            margins[c].normal_score(rs.rows[(r, c)])
        } else {
            f64::NAN
        }
    });
    MaskedMatrix {
        values,
        mask: rs.mask.clone(),
    }
}

/// Pairwise-complete correlation estimate. Entries without concurrent
/// observations are NaN and listed in `missing` as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationEstimate {
    pub sigma_hat: DMatrix<f64>,
    pub pair_counts: DMatrix<usize>,
    pub missing: Vec<(usize, usize)>,
}

/// Products are taken over concurrent observations of each pair, centred
/// at each column's mean over all of its own observations.
pub fn estimate_correlation(zn: &MaskedMatrix) -> CorrelationEstimate {
    let (n, k) = (zn.nrows(), zn.ncols());
    let means: Vec<f64> = (0..k)
        .map(|c| {
            let (s, m) = (0..n)
                .filter(|&r| zn.mask[(r, c)])
                .fold((0.0, 0usize), |(s, m), r| (s + zn.values[(r, c)], m + 1));
            if m > 0 {
                s / m as f64
            } else {
                f64::NAN
            }
        })
        .collect();
    let mut sigma_hat = DMatrix::from_element(k, k, f64::NAN);
    let mut pair_counts = DMatrix::from_element(k, k, 0usize);
    let mut missing = Vec::new();
    for i in 0..k {
        pair_counts[(i, i)] = (0..n).filter(|&r| zn.mask[(r, i)]).count();
        sigma_hat[(i, i)] = 1.0;
        for j in i + 1..k {
            let (mut sxy, mut sxx, mut syy, mut m) = (0.0, 0.0, 0.0, 0usize);
            for r in 0..n {
                if zn.mask[(r, i)] && zn.mask[(r, j)] {
                    let a = zn.values[(r, i)] - means[i];
                    let b = zn.values[(r, j)] - means[j];
                    sxy += a * b;
                    sxx += a * a;
                    syy += b * b;
                    m += 1;
                }
            }
            pair_counts[(i, j)] = m;
            pair_counts[(j, i)] = m;
            let rho = if m == 0 {
                missing.push((i, j));
                f64::NAN
            } else if sxx > 0.0 && syy > 0.0 {
                (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            sigma_hat[(i, j)] = rho;
            sigma_hat[(j, i)] = rho;
        }
    }
    CorrelationEstimate {
        sigma_hat,
        pair_counts,
        missing,
    }
}

/// Replace flagged entries by `fallback`, or fail listing the pairs.
pub fn resolve_missing(est: &CorrelationEstimate, fallback: Option<f64>) -> Result<DMatrix<f64>> {
    if est.missing.is_empty() {
        return Ok(est.sigma_hat.clone());
    }
    let Some(rho) = fallback else {
        return Err(Error::MissingPairs(est.missing.clone()));
    };
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("fallback correlation {rho} outside [-1, 1]")));
    }
    let mut s = est.sigma_hat.clone();
    for &(i, j) in &est.missing {
        s[(i, j)] = rho;
        s[(j, i)] = rho;
    }
    Ok(s)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn is_repaired(m: &DMatrix<f64>) -> bool {
    let k = m.nrows();
    (0..k).all(|i| m[(i, i)] == 1.0)
        && (0..k).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)] && m[(i, j)].abs() <= 1.0))
        && min_eigenvalue(m) >= MIN_EIGENVALUE
}

fn unit_diagonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    let d: Vec<f64> = (0..k).map(|i| m[(i, i)].sqrt()).collect();
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            1.0
        } else {
            (m[(i, j)] / (d[i] * d[j])).clamp(-1.0, 1.0)
        }
    })
}

/// Nearest correlation matrix with eigenvalues at least `1e-8`: repeated
/// eigenvalue clipping and rescaling to unit diagonal. Returns the input
/// unchanged when it already qualifies.
pub fn nearest_pd(sigma_hat: &DMatrix<f64>) -> DMatrix<f64> {
    let k = sigma_hat.nrows();
    let mut m = DMatrix::from_fn(k, k, |i, j| 0.5 * (sigma_hat[(i, j)] + sigma_hat[(j, i)]));
    if is_repaired(&m) && m == *sigma_hat {
        return m;
    }
    m.fill_diagonal(1.0);
    for _ in 0..MAX_REPAIR_ITERATIONS {
        if is_repaired(&m) {
            return m;
        }
        let eig = SymmetricEigen::new(m.clone());
        let lambda = eig.eigenvalues.map(|l| l.max(MIN_EIGENVALUE));
        let q = &eig.eigenvectors;
        let clipped = q * DMatrix::from_diagonal(&lambda) * q.transpose();
        let sym = DMatrix::from_fn(k, k, |i, j| 0.5 * (clipped[(i, j)] + clipped[(j, i)]));
        m = unit_diagonal(&sym);
    }
    if is_repaired(&m) {
        return m;
    }
    // Shrink toward the identity just far enough.
    let lmin = min_eigenvalue(&m);
    let mut t = ((MIN_EIGENVALUE - lmin) / (1.0 - lmin)).clamp(0.0, 1.0);
    loop {
        let blended = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                1.0
            } else {
                (1.0 - t) * m[(i, j)]
            }
        });
        if is_repaired(&blended) || t >= 1.0 {
            return blended;
        }
        t = (t * 2.0).max(1e-12).min(1.0);
    }
}

/// Gaussian-copula residual model for one conditioning site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ResidualModelRepr", into = "ResidualModelRepr")]
pub struct ResidualModel {
    pub margins: Vec<KernelCdf>,
    /// Raw pairwise estimate; NaN where a pair had no concurrent data.
    pub sigma_hat: DMatrix<f64>,
    pub sigma_tilde: DMatrix<f64>,
    pub pair_counts: DMatrix<usize>,
    /// Whether `sigma_tilde` differs from `sigma_hat`.
    pub repaired: bool,
    chol: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct ResidualModelRepr {
    margins: Vec<KernelCdf>,
    sigma_hat: Vec<Vec<Option<f64>>>,
    sigma_tilde: Vec<Vec<f64>>,
    pair_counts: Vec<Vec<usize>>,
    repaired: bool,
}

fn rows_of<T: Clone + nalgebra::Scalar>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn from_rows<T: Clone + nalgebra::Scalar>(rows: &[Vec<T>], what: &str) -> Result<DMatrix<T>> {
    let k = rows.len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::Schema(format!("{what} must be square")));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j].clone()))
}

impl From<ResidualModel> for ResidualModelRepr {
    fn from(m: ResidualModel) -> Self {
        Self {
            sigma_hat: rows_of(&m.sigma_hat.map(|x| if x.is_nan() { None } else { Some(x) })),
            sigma_tilde: rows_of(&m.sigma_tilde),
            pair_counts: rows_of(&m.pair_counts),
            margins: m.margins,
            repaired: m.repaired,
        }
    }
}

impl TryFrom<ResidualModelRepr> for ResidualModel {
    type Error = Error;
    fn try_from(r: ResidualModelRepr) -> Result<Self> {
        let sigma_hat = from_rows(&r.sigma_hat, "sigma_hat")?.map(|x| x.unwrap_or(f64::NAN));
        let sigma_tilde = from_rows(&r.sigma_tilde, "sigma_tilde")?;
        let pair_counts = from_rows(&r.pair_counts, "pair_counts")?;
        let k = r.margins.len();
        if sigma_tilde.nrows() != k || sigma_hat.nrows() != k || pair_counts.nrows() != k {
            return Err(Error::Schema("residual model dimensions disagree".into()));
        }
        let chol = cholesky(&sigma_tilde)?;
        Ok(Self {
            margins: r.margins,
            sigma_hat,
            sigma_tilde,
            pair_counts,
            repaired: r.repaired,
            chol,
        })
    }
}

impl ResidualModel {
    pub fn from_parts(
        margins: Vec<KernelCdf>,
        sigma_hat: DMatrix<f64>,
        sigma_tilde: DMatrix<f64>,
        pair_counts: DMatrix<usize>,
    ) -> Result<Self> {
        let chol = cholesky(&sigma_tilde)?;
        let repaired = sigma_hat != sigma_tilde;
        Ok(Self {
            margins,
            sigma_hat,
            sigma_tilde,
            pair_counts,
            repaired,
            chol,
        })
    }

    /// Lower Cholesky factor of `sigma_tilde`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Draw a Gaussian-scale vector `Z^N` into `zn`.
    pub fn sample_normal<R: Rng + ?Sized>(&self, rng: &mut R, zn: &mut [f64]) {
        let k = self.margins.len();
        let e: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        for i in 0..k {
            zn[i] = (0..=i).map(|j| self.chol[(i, j)] * e[j]).sum();
        }
    }
}

impl ResidualLaw for ResidualModel {
    fn dim(&self) -> usize {
        self.margins.len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        self.sample_normal(rng, out);
        for (x, g) in out.iter_mut().zip(&self.margins) {
            *x = g.interpolated_quantile(*x);
        }
    }
}

/// Fit kernel margins on all observed residual cells, then the copula
/// correlation from pairwise-complete normal scores.
pub fn fit_residual_model(rs: &ResidualSample, missing_pair_correlation: Option<f64>) -> Result<ResidualModel> {
    let margins = (0..rs.n_components())
        .map(|c| fit_kernel_margin(&rs.column(c)))
        .collect::<Result<Vec<_>>>()?;
    let zn = to_gaussian_scale(rs, &margins);
    let est = estimate_correlation(&zn);
    let resolved = resolve_missing(&est, missing_pair_correlation)?;
    let sigma_tilde = nearest_pd(&resolved);
    let mut model = ResidualModel::from_parts(margins, est.sigma_hat.clone(), sigma_tilde, est.pair_counts)?;
    model.repaired = resolved != model.sigma_tilde;
    Ok(model)
}

/// Uniform resampling of complete observed residual vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalResiduals {
    pub rows: Vec<Vec<f64>>,
}

impl EmpiricalResiduals {
    pub fn fit(rs: &ResidualSample) -> Result<Self> {
        let rows = rs.complete_rows();
        if rows.is_empty() {
            return Err(Error::InsufficientData("no complete residual rows".into()));
        }
        Ok(Self { rows })
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.rows.len())
    }
}

impl ResidualLaw for EmpiricalResiduals {
    fn dim(&self) -> usize {
        self.rows[0].len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        out.copy_from_slice(&self.rows[self.sample_index(rng)]);
    }
}

/// Multivariate Gaussian kernel density on complete residual rows with a
/// diagonal normal-reference bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct MvkdeModel {
    pub centers: Vec<Vec<f64>>,
    /// Kernel standard deviations, the square roots of the diagonal of H.
    pub h: Vec<f64>,
}

impl MvkdeModel {
    pub fn bandwidth_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.h.len(),
            self.h.iter().map(|h| h * h),
        ))
    }
}

pub fn fit_mvkde(rs: &ResidualSample) -> Result<MvkdeModel> {
    let centers = rs.complete_rows();
    let k = rs.n_components();
    if centers.len() < k.max(2) {
        return Err(Error::InsufficientData(format!(
            "{} complete residual rows, need at least {}",
            centers.len(),
            k.max(2)
        )));
    }
    let n = centers.len() as f64;
    let factor = (4.0 / ((k as f64 + 2.0) * n)).powf(1.0 / (k as f64 + 4.0));
    let h = (0..k)
        .map(|c| {
            let col: Vec<f64> = centers.iter().map(|r| r[c]).collect();
            let s = sd(&col);
            let s = if s > 0.0 { s } else { 1e-8 };
            s * factor
        })
        .collect();
    Ok(MvkdeModel { centers, h })
}

impl ResidualLaw for MvkdeModel {
    fn dim(&self) -> usize {
        self.h.len()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let c = &self.centers[rng.random_range(0..self.centers.len())];
        for i in 0..out.len() {
            let e: f64 = StandardNormal.sample(rng);
            out[i] = c[i] + self.h[i] * e;
        }
    }
}
