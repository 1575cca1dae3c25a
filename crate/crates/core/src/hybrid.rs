//! Permutation-smoothing transport estimates and the hybrid transform.
//!
//! A dataset is represented by its mean, its covariance and the values of an
//! estimated transport map from the reference measure to its standardized
//! version, evaluated at the shared reference anchors.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{bures_barycenter, bures_sq, validate_weights, GaussianSummary, SpdMatrix};
use crate::reference::{build_reference, standardize, ReferenceMeasure, StandardizedDataset};
use crate::rng;
use crate::transport::{assign_points, Dataset};

/// Transport map estimated from one subsample.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportEstimate {
    /// The subsample of standardized points, in original order.
    pub anchors_from: DMatrix<f64>,
    /// Row `i` is the anchor assigned to subsample point `i`.
    pub matched_to: DMatrix<f64>,
    /// Row `s` is the estimated map evaluated at anchor `s`.
    pub evaluated_at_anchors: DMatrix<f64>,
    /// `perm[i]` is the anchor index assigned to subsample point `i`.
    pub perm: Vec<usize>,
    /// Number of nearest subsample points averaged by the extension.
    pub neighbors: usize,
}

impl TransportEstimate {
    /// Evaluate the nearest-neighbour extension at `z`.
    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        extend(&self.anchors_from, &self.matched_to, z, self.neighbors)
    }

    /// Row `s` is the subsample point that anchor `s` was matched to.
    pub fn inverse_at_anchors(&self) -> DMatrix<f64> {
        let mut inv = DMatrix::zeros(self.anchors_from.nrows(), self.anchors_from.ncols());
        for (i, &s) in self.perm.iter().enumerate() {
            inv.set_row(s, &self.anchors_from.row(i));
        }
        inv
    }
}

/// Indices of the `r` rows of `points` nearest to `z`, plus any rows tied
/// with the `r`-th distance. Duplicated sample points share one Voronoi cell,
/// so the regression averages over all of them.
fn nearest(points: &DMatrix<f64>, z: &[f64], r: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = (0..points.nrows())
        .map(|i| {
            let d: f64 = z.iter().enumerate().map(|(k, v)| (v - points[(i, k)]).powi(2)).sum();
            (d, i)
        })
        .collect();
    if r == 1 {
        let best = dist.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
        return dist.iter().filter(|x| x.0 == best).map(|x| x.1).collect();
    }
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let cutoff = dist[r - 1].0;
    dist.iter().take_while(|x| x.0 <= cutoff).map(|x| x.1).collect()
}

fn extend(source: &DMatrix<f64>, target: &DMatrix<f64>, z: &[f64], r: usize) -> Vec<f64> {
    let idx = nearest(source, z, r);
    let mut out = vec![0.0; target.ncols()];
    for &i in &idx {
        for (k, o) in out.iter_mut().enumerate() {
            *o += target[(i, k)];
        }
    }
    out.iter_mut().for_each(|o| *o /= idx.len() as f64);
    out
}

/// Subsample, assign to the anchors, and extend by nearest neighbours.
pub fn estimate_transport(
    xt: &StandardizedDataset,
    reference: &ReferenceMeasure,
    m: usize,
    seed: u64,
) -> Result<TransportEstimate> {
    estimate_transport_with(xt, reference, m, seed, 1)
}

/// As [`estimate_transport`], averaging the `neighbors` nearest subsample points.
pub fn estimate_transport_with(
    xt: &StandardizedDataset,
    reference: &ReferenceMeasure,
    m: usize,
    seed: u64,
    neighbors: usize,
) -> Result<TransportEstimate> {
    if m != reference.m() {
        return Err(Error::InvalidParam(format!(
            "subsample size {m} differs from the reference's {} anchors",
            reference.m()
        )));
    }
    if xt.dim() != reference.dim() {
        return Err(Error::Dimension {
            expected: reference.dim(),
            got: xt.dim(),
        });
    }
    if m > xt.n() {
        return Err(Error::Subsample {
            requested: m,
            available: xt.n(),
        });
    }
    if neighbors == 0 || neighbors > m {
        return Err(Error::InvalidParam(format!("neighbour count {neighbors} outside 1..={m}")));
    }
    let sub = subsample(&xt.points, m, seed);
    let assignment = assign_points(&sub, &reference.anchors)?;
    let d = sub.ncols();
    let mut matched_to = DMatrix::zeros(m, d);
    for (i, &s) in assignment.perm.iter().enumerate() {
        matched_to.set_row(i, &reference.anchors.row(s));
    }
    let mut evaluated = DMatrix::zeros(m, d);
    for s in 0..m {
        let u: Vec<f64> = reference.anchors.row(s).iter().copied().collect();
        let t = extend(&sub, &matched_to, &u, neighbors);
        for (k, v) in t.into_iter().enumerate() {
            evaluated[(s, k)] = v;
        }
    }
    Ok(TransportEstimate {
        anchors_from: sub,
        matched_to,
        evaluated_at_anchors: evaluated,
        perm: assignment.perm,
        neighbors,
    })
}

/// `m` rows drawn without replacement, kept in their original order.
pub(crate) fn subsample(points: &DMatrix<f64>, m: usize, seed: u64) -> DMatrix<f64> {
    let n = points.nrows();
    if m == n {
        return points.clone();
    }
    let mut stream = rng::stream(seed);
    let mut idx = index::sample(&mut stream, n, m).into_vec();
    idx.sort_unstable();
    points.select_rows(idx.iter())
}

/// `(1/n) sum_i |x_i - T(x_i)|^2` over every standardized point.
pub fn empirical_transport_cost(est: &TransportEstimate, xt: &StandardizedDataset) -> f64 {
    let n = xt.n();
    let total: f64 = (0..n)
        .map(|i| {
            let x: Vec<f64> = xt.points.row(i).iter().copied().collect();
            let t = est.eval(&x);
            x.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum();
    total / n as f64
}

/// Mean, covariance and shape block of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridTransform {
    pub mean: DVector<f64>,
    pub cov: SpdMatrix,
    /// Row `s` is the standardized point that anchor `s` is transported to.
    pub shape: DMatrix<f64>,
    pub ref_id: u64,
}

impl HybridTransform {
    /// A transform whose map is the identity (shape term zero against the reference).
    pub fn identity(summary: GaussianSummary, reference: &ReferenceMeasure) -> Self {
        HybridTransform {
            mean: summary.mean,
            cov: summary.cov,
            shape: reference.anchors.clone(),
            ref_id: reference.id(),
        }
    }

    pub fn summary(&self) -> GaussianSummary {
        GaussianSummary {
            mean: self.mean.clone(),
            cov: self.cov.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn m(&self) -> usize {
        self.shape.nrows()
    }
}

/// Hybrid transform of a raw dataset against `reference`.
pub fn hybrid_transform(x: &Dataset, reference: &ReferenceMeasure, m: usize, seed: u64) -> Result<HybridTransform> {
    let xt = standardize(x)?;
    let est = estimate_transport(&xt, reference, m, seed)?;
    Ok(from_estimate(GaussianSummary::from_points(&x.points), &est, reference))
}

pub(crate) fn from_estimate(summary: GaussianSummary, est: &TransportEstimate, reference: &ReferenceMeasure) -> HybridTransform {
    HybridTransform {
        mean: summary.mean,
        cov: summary.cov,
        shape: est.inverse_at_anchors(),
        ref_id: reference.id(),
    }
}

/// Location, scale and shape parts of the squared hybrid distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridDistanceBreakdown {
    pub location_sq: f64,
    pub scale_sq: f64,
    pub shape_sq: f64,
    pub total_sq: f64,
}

fn check_compatible(a: &HybridTransform, b: &HybridTransform) -> Result<()> {
    if a.ref_id != b.ref_id {
        return Err(Error::ReferenceMismatch);
    }
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    if a.m() != b.m() {
        return Err(Error::Size(a.m(), b.m()));
    }
    Ok(())
}

/// Squared hybrid distance `|mu_a - mu_b|^2 + B^2(S_a, S_b) + (1/m) sum_s |T_a(U_s) - T_b(U_s)|^2`.
pub fn hybrid_distance_sq(a: &HybridTransform, b: &HybridTransform) -> Result<HybridDistanceBreakdown> {
    check_compatible(a, b)?;
    let location_sq = (&a.mean - &b.mean).norm_squared();
    let scale_sq = bures_sq(&a.cov, &b.cov)?;
    let shape_sq = (&a.shape - &b.shape).norm_squared() / a.m() as f64;
    Ok(HybridDistanceBreakdown {
        location_sq,
        scale_sq,
        shape_sq,
        total_sq: location_sq + scale_sq + shape_sq,
    })
}

/// Weighted barycenter of hybrid transforms sharing a reference.
pub fn hybrid_barycenter(transforms: &[&HybridTransform], weights: &[f64]) -> Result<HybridTransform> {
    if transforms.is_empty() {
        return Err(Error::InvalidParam("barycenter of an empty family".into()));
    }
    validate_weights(weights, transforms.len())?;
    for t in &transforms[1..] {
        check_compatible(transforms[0], t)?;
    }
    let (items, weights): (Vec<&HybridTransform>, Vec<f64>) = transforms
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(t, w)| (*t, *w))
        .unzip();
    if items.len() == 1 {
        return Ok(items[0].clone());
    }
    let first = items[0];
    let mut mean = DVector::zeros(first.dim());
    let mut shape = DMatrix::zeros(first.m(), first.dim());
    for (t, w) in items.iter().zip(&weights) {
        mean += &t.mean * *w;
        shape += &t.shape * *w;
    }
    let covs: Vec<&SpdMatrix> = items.iter().map(|t| &t.cov).collect();
    let cov = bures_barycenter(&covs, &weights)?;
    Ok(HybridTransform {
        mean,
        cov,
        shape,
        ref_id: first.ref_id,
    })
}

/// Points `mu + Sigma^{1/2} T(U_s)`, one per anchor, approximating the
/// distribution a transform represents.
pub fn materialize_barycenter(bary: &HybridTransform, reference: &ReferenceMeasure) -> Result<Dataset> {
    if bary.ref_id != reference.id() {
        return Err(Error::ReferenceMismatch);
    }
    if bary.dim() != reference.dim() {
        return Err(Error::Dimension {
            expected: reference.dim(),
            got: bary.dim(),
        });
    }
    let root = bary.cov.sqrt();
    let mut points = &bary.shape * root.as_matrix();
    for i in 0..points.nrows() {
        for k in 0..points.ncols() {
            points[(i, k)] += bary.mean[k];
        }
    }
    Dataset::new("barycenter", points)
}

/// Options for building transforms for a whole collection.
#[derive(Debug, Clone, Copy)]
pub struct TransformOptions {
    pub m: usize,
    pub seed: u64,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions {
            m: 100,
            seed: 0,
        }
    }
}

/// Standardize every dataset, build the shared reference and the transforms.
pub fn build_transforms(datasets: &[Dataset], opts: TransformOptions) -> Result<(ReferenceMeasure, Vec<HybridTransform>)> {
    let standardized: Vec<StandardizedDataset> = datasets.iter().map(standardize).collect::<Result<_>>()?;
    let reference = build_reference(&standardized, opts.m, opts.seed)?;
    let transforms = datasets
        .par_iter()
        .zip(standardized.par_iter())
        .enumerate()
        .map(|(j, (x, xt))| {
            let seed = rng::indexed_seed(opts.seed, rng::SUBSAMPLE, j as u64);
            let est = estimate_transport(xt, &reference, opts.m, seed)?;
            Ok(from_estimate(GaussianSummary::from_points(&x.points), &est, &reference))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((reference, transforms))
}
