//! Positive-semidefinite matrix algebra and the Gaussian Wasserstein distance.
//!
//! The squared 2-Wasserstein distance between `N(m1, A)` and `N(m2, B)` is
//! `|m1 - m2|^2 + B^2(A, B)` where the Bures term is
//! `tr A + tr B - 2 tr (A^{1/2} B A^{1/2})^{1/2}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const EIGEN_TOL: f64 = 1e-10;

/// A symmetric positive-semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validate `m` as symmetric PSD. Tiny asymmetry is averaged away.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if let Some((i, j)) = first_non_finite(&m) {
            return Err(Error::InvalidCost(i, j));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::InvalidMatrix(asym / scale));
        }
        let sym = symmetrize(m);
        let eig = SymmetricEigen::new(sym.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if min < -EIGEN_TOL * max.max(0.0) || (max <= 0.0 && min < 0.0) {
            return Err(Error::NotPsd(min));
        }
        Ok(SpdMatrix(sym))
    }

    /// Wrap a matrix known to be PSD up to rounding; symmetrizes it.
    pub(crate) fn from_psd_unchecked(m: DMatrix<f64>) -> Self {
        SpdMatrix(symmetrize(m))
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        SpdMatrix::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn zeros(dim: usize) -> Self {
        SpdMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Eigenvalues and eigenvectors with negative rounding noise clamped to 0.
    fn clamped_eigen(&self) -> (DVector<f64>, DMatrix<f64>) {
        let eig = SymmetricEigen::new(self.0.clone());
        let values = eig.eigenvalues.map(|v| v.max(0.0));
        (values, eig.eigenvectors)
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        self.clamped_eigen().0
    }

    fn spectral_map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let (values, vectors) = self.clamped_eigen();
        let mapped = DMatrix::from_diagonal(&values.map(f));
        symmetrize(&vectors * mapped * vectors.transpose())
    }

    /// The symmetric PSD square root.
    pub fn sqrt(&self) -> SpdMatrix {
        SpdMatrix(self.spectral_map(f64::sqrt))
    }

    /// `A^{-1/2}`; fails when `A` is singular.
    pub fn inv_sqrt(&self) -> Result<SpdMatrix> {
        let (values, _) = self.clamped_eigen();
        let max = values.max();
        let min = values.min();
        if min <= EIGEN_TOL * max || max <= 0.0 {
            return Err(Error::NotPsd(min));
        }
        Ok(SpdMatrix(self.spectral_map(|v| 1.0 / v.sqrt())))
    }

    /// `A + eps I` when the smallest eigenvalue is below `eps`, with
    /// `eps = rel * tr(A) / d`. Returns the matrix and whether a ridge was added.
    pub(crate) fn ridged(&self, rel: f64) -> (SpdMatrix, bool) {
        let d = self.dim();
        if d == 0 {
            return (self.clone(), false);
        }
        let eps = rel * self.trace() / d as f64;
        let min = self.eigenvalues().min();
        if eps > 0.0 && min < eps {
            let m = &self.0 + DMatrix::identity(d, d) * eps;
            (SpdMatrix(m), true)
        } else {
            (self.clone(), false)
        }
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

/// Square root of a symmetric PSD matrix.
pub fn spd_sqrt(a: &SpdMatrix) -> SpdMatrix {
    a.sqrt()
}

fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

/// `tr (A^{1/2} B A^{1/2})^{1/2}` given a precomputed `A^{1/2}`.
fn fidelity(a_sqrt: &SpdMatrix, b: &SpdMatrix) -> f64 {
    let s = a_sqrt.as_matrix();
    let inner = SpdMatrix::from_psd_unchecked(s * b.as_matrix() * s);
    inner.eigenvalues().iter().map(|v| v.sqrt()).sum()
}

/// Whether `a` precedes `b` in a fixed total order on matrices. Symmetric
/// quantities evaluate their arguments in this order so that swapping them
/// gives bit-identical results.
pub(crate) fn canonical_order(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let key = |m: &DMatrix<f64>| (m.nrows(), m.ncols());
    match key(a).cmp(&key(b)) {
        std::cmp::Ordering::Equal => {}
        o => return o.is_le(),
    }
    for (x, y) in a.iter().zip(b.iter()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o.is_lt(),
        }
    }
    true
}

/// Squared Bures distance between two covariance matrices.
pub fn bures_sq(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    if a == b {
        return Ok(0.0);
    }
    let (a, b) = if canonical_order(a.as_matrix(), b.as_matrix()) { (a, b) } else { (b, a) };
    let value = a.trace() + b.trace() - 2.0 * fidelity(&a.sqrt(), b);
    Ok(value.max(0.0))
}

/// Mean vector and covariance of a dataset (or of a Gaussian).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
}

impl GaussianSummary {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        check_dims(cov.dim(), mean.len())?;
        Ok(GaussianSummary { mean, cov })
    }

    /// Sample mean and covariance (denominator `n - 1`) of the rows of `points`.
    /// A single row yields a zero covariance.
    pub fn from_points(points: &DMatrix<f64>) -> Self {
        let (mean, cov) = sample_moments(points);
        GaussianSummary {
            mean,
            cov: SpdMatrix::from_psd_unchecked(cov),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) fn sample_moments(points: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = points.nrows();
    let d = points.ncols();
    let mean = DVector::from_iterator(d, points.column_iter().map(|c| c.mean()));
    let mut cov = DMatrix::zeros(d, d);
    if n > 1 {
        let mut centered = points.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        cov = centered.transpose() * &centered / (n as f64 - 1.0);
    }
    (mean, cov)
}

/// Squared Gaussian Wasserstein distance `|mu_p - mu_q|^2 + B^2(S_p, S_q)`.
pub fn gaussian_wasserstein_sq(p: &GaussianSummary, q: &GaussianSummary) -> Result<f64> {
    check_dims(p.dim(), q.dim())?;
    let loc = (&p.mean - &q.mean).norm_squared();
    Ok(loc + bures_sq(&p.cov, &q.cov)?)
}

/// Controls for the covariance barycenter fixed point.
#[derive(Debug, Clone, Copy)]
pub struct BarycenterOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for BarycenterOptions {
    fn default() -> Self {
        BarycenterOptions {
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

pub(crate) fn validate_weights(weights: &[f64], count: usize) -> Result<()> {
    if weights.len() != count {
        return Err(Error::Size(count, weights.len()));
    }
    if count == 0 {
        return Err(Error::InvalidParam("empty weight vector".into()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParam("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParam(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Relative residual of the barycenter fixed-point equation at `sigma`.
pub fn barycenter_residual(sigma: &SpdMatrix, covs: &[&SpdMatrix], weights: &[f64]) -> f64 {
    let s = sigma.sqrt();
    let rhs = weighted_root_sum(&s, covs, weights);
    (sigma.as_matrix() - rhs).norm() / sigma.as_matrix().norm().max(f64::MIN_POSITIVE)
}

/// `sum_j w_j (S^{1/2} C_j S^{1/2})^{1/2}`.
fn weighted_root_sum(s_sqrt: &SpdMatrix, covs: &[&SpdMatrix], weights: &[f64]) -> DMatrix<f64> {
    let d = s_sqrt.dim();
    let s = s_sqrt.as_matrix();
    let mut acc = DMatrix::zeros(d, d);
    for (c, w) in covs.iter().zip(weights) {
        let inner = SpdMatrix::from_psd_unchecked(s * c.as_matrix() * s);
        acc += inner.sqrt().into_inner() * *w;
    }
    symmetrize(acc)
}

/// Weighted Bures barycenter of covariance matrices.
///
/// Iterates `S <- S^{-1/2} (sum_j w_j (S^{1/2} C_j S^{1/2})^{1/2})^2 S^{-1/2}`
/// from the arithmetic mean until the fixed-point residual drops below `tol`.
pub fn bures_barycenter(covs: &[&SpdMatrix], weights: &[f64]) -> Result<SpdMatrix> {
    bures_barycenter_with(covs, weights, BarycenterOptions::default())
}

pub fn bures_barycenter_with(
    covs: &[&SpdMatrix],
    weights: &[f64],
    opts: BarycenterOptions,
) -> Result<SpdMatrix> {
    validate_weights(weights, covs.len())?;
    let d = covs[0].dim();
    for c in covs {
        check_dims(d, c.dim())?;
    }
    let (covs, weights): (Vec<&SpdMatrix>, Vec<f64>) = covs
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(c, w)| (*c, *w))
        .unzip();
    if covs.len() == 1 || covs.windows(2).all(|p| p[0] == p[1]) {
        return Ok(covs[0].clone());
    }

    let regularized: Vec<SpdMatrix> = covs.iter().map(|c| c.ridged(1e-10).0).collect();
    let covs: Vec<&SpdMatrix> = regularized.iter().collect();

    let mut sigma = DMatrix::zeros(d, d);
    for (c, w) in covs.iter().zip(&weights) {
        sigma += c.as_matrix() * *w;
    }
    let mut sigma = SpdMatrix::from_psd_unchecked(sigma);
    if sigma.trace() <= 0.0 {
        return Ok(sigma);
    }

    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let s = sigma.sqrt();
        let rhs = weighted_root_sum(&s, &covs, &weights);
        residual = (sigma.as_matrix() - &rhs).norm() / sigma.as_matrix().norm();
        if residual <= opts.tol {
            return Ok(sigma);
        }
        let s_inv = sigma.inv_sqrt()?;
        let next = s_inv.as_matrix() * &rhs * &rhs * s_inv.as_matrix();
        sigma = SpdMatrix::from_psd_unchecked(next);
    }
    residual = residual.min(barycenter_residual(&sigma, &covs, &weights));
    if residual <= opts.tol {
        return Ok(sigma);
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        residual,
    })
}

/// Barycenter of Gaussian summaries: weighted mean and Bures barycenter.
pub fn gaussian_barycenter(items: &[&GaussianSummary], weights: &[f64]) -> Result<GaussianSummary> {
    validate_weights(weights, items.len())?;
    let d = items[0].dim();
    let mut mean = DVector::zeros(d);
    for (g, w) in items.iter().zip(weights) {
        check_dims(d, g.dim())?;
        mean += &g.mean * *w;
    }
    let covs: Vec<&SpdMatrix> = items.iter().map(|g| &g.cov).collect();
    let cov = bures_barycenter(&covs, weights)?;
    Ok(GaussianSummary { mean, cov })
}
