//! Standardization and the pooled kernel-density reference measure.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{sample_moments, SpdMatrix};
use crate::rng::{self, StreamRng};
use crate::transport::Dataset;

/// A dataset mapped to zero mean and identity covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedDataset {
    pub points: DMatrix<f64>,
    pub source_mean: DVector<f64>,
    /// The `Sigma^{1/2}` used; its inverse was applied to the centered data.
    pub source_cov_sqrt: SpdMatrix,
    /// Set when the sample covariance was singular and had to be ridged.
    pub degenerate: bool,
}

impl StandardizedDataset {
    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// `(X - mean) Sigma^{-1/2}` with the sample mean and covariance (denominator `n - 1`).
pub fn standardize(x: &Dataset) -> Result<StandardizedDataset> {
    standardize_points(&x.points)
}

pub(crate) fn standardize_points(points: &DMatrix<f64>) -> Result<StandardizedDataset> {
    let (n, d) = points.shape();
    if n <= d {
        return Err(Error::InsufficientData(format!(
            "{n} observations cannot be standardized in dimension {d}"
        )));
    }
    let (mean, cov) = sample_moments(points);
    let cov = SpdMatrix::from_psd_unchecked(cov);
    if cov.trace() <= 0.0 {
        return Err(Error::InsufficientData("dataset has zero variance".into()));
    }
    let (cov, degenerate) = cov.ridged(1e-8);
    let inv_sqrt = cov.inv_sqrt()?;
    let mut centered = points.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    Ok(StandardizedDataset {
        points: centered * inv_sqrt.as_matrix(),
        source_mean: mean,
        source_cov_sqrt: cov.sqrt(),
        degenerate,
    })
}

/// The reference measure: a product-Gaussian KDE over the pooled standardized
/// points, and `m` anchors drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceMeasure {
    pub pooled: DMatrix<f64>,
    pub bandwidth: Vec<f64>,
    pub anchors: DMatrix<f64>,
    pub anchor_density: Vec<f64>,
    pub seed: u64,
    id: u64,
}

impl ReferenceMeasure {
    pub fn dim(&self) -> usize {
        self.pooled.ncols()
    }

    pub fn m(&self) -> usize {
        self.anchors.nrows()
    }

    /// Identifier that transforms carry to prove which reference they used.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Draw `count` points from the KDE mixture.
    pub fn sample(&self, count: usize, rng: &mut StreamRng) -> DMatrix<f64> {
        let (n, d) = self.pooled.shape();
        let mut out = DMatrix::zeros(count, d);
        for i in 0..count {
            let src = rng.random_range(0..n);
            for k in 0..d {
                let noise: f64 = rng.sample(StandardNormal);
                out[(i, k)] = self.pooled[(src, k)] + self.bandwidth[k] * noise;
            }
        }
        out
    }
}

/// Per-coordinate bandwidth `h_k = sd_k (4 / ((d + 2) n))^{1/(d + 4)}`.
pub fn silverman_bandwidth(points: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = points.shape();
    let factor = (4.0 / ((d as f64 + 2.0) * n as f64)).powf(1.0 / (d as f64 + 4.0));
    let (_, cov) = sample_moments(points);
    (0..d)
        .map(|k| {
            let sd = cov[(k, k)].sqrt();
            if sd > 0.0 { sd * factor } else { factor }
        })
        .collect()
}

/// Pool the standardized datasets and draw `m` anchors from their KDE.
pub fn build_reference(standardized: &[StandardizedDataset], m: usize, seed: u64) -> Result<ReferenceMeasure> {
    if m < 1 {
        return Err(Error::InvalidParam("reference needs at least one anchor".into()));
    }
    let first = standardized
        .first()
        .ok_or_else(|| Error::InvalidParam("no datasets to pool".into()))?;
    let d = first.dim();
    let total: usize = standardized.iter().map(StandardizedDataset::n).sum();
    let mut pooled = DMatrix::zeros(total, d);
    let mut row = 0;
    for s in standardized {
        if s.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: s.dim(),
            });
        }
        pooled.rows_mut(row, s.n()).copy_from(&s.points);
        row += s.n();
    }
    let bandwidth = silverman_bandwidth(&pooled);
    let mut reference = ReferenceMeasure {
        pooled,
        bandwidth,
        anchors: DMatrix::zeros(0, d),
        anchor_density: Vec::new(),
        seed,
        id: 0,
    };
    let mut stream = rng::stream(rng::child_seed(seed, rng::ANCHORS));
    reference.anchors = reference.sample(m, &mut stream);
    reference.anchor_density = (0..m)
        .map(|s| density_at(&reference, reference.anchors.row(s).iter().copied()))
        .collect();
    reference.id = fingerprint(&reference);
    Ok(reference)
}

fn fingerprint(r: &ReferenceMeasure) -> u64 {
    // FNV-1a over the defining values.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    eat(r.seed);
    eat(r.pooled.nrows() as u64);
    for v in r.anchors.iter().chain(&r.bandwidth) {
        eat(v.to_bits());
    }
    h
}

fn density_at(r: &ReferenceMeasure, z: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, d) = r.pooled.shape();
    let log_norm: f64 = r
        .bandwidth
        .iter()
        .map(|h| -(h * (2.0 * std::f64::consts::PI).sqrt()).ln())
        .sum();
    let z: Vec<f64> = z.collect();
    let mut logs = Vec::with_capacity(n);
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        let mut e = 0.0;
        for (k, zk) in z.iter().enumerate().take(d) {
            let u = (zk - r.pooled[(i, k)]) / r.bandwidth[k];
            e -= 0.5 * u * u;
        }
        max = max.max(e);
        logs.push(e);
    }
    let sum: f64 = logs.iter().map(|e| (e - max).exp()).sum();
    let log_density = max + sum.ln() - (n as f64).ln() + log_norm;
    log_density.exp().max(f64::MIN_POSITIVE)
}

/// Density of the reference KDE at `z`; always strictly positive.
pub fn kde_density(r: &ReferenceMeasure, z: &[f64]) -> Result<f64> {
    if z.len() != r.dim() {
        return Err(Error::Dimension {
            expected: r.dim(),
            got: z.len(),
        });
    }
    Ok(density_at(r, z.iter().copied()))
}
