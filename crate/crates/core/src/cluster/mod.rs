//! Clustering of distributions: k-means in several geometries, k-medoids,
//! single-linkage merging, medoid-shift, elbow curves and the adjusted Rand
//! index.

mod ari;
mod elbow;
mod hierarchical;
mod kmeans;
mod medoid;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ari::adjusted_rand_index;
pub use elbow::{elbow_curve, ElbowPoint};
pub use hierarchical::{hierarchical_single_linkage, Merge, MergeTree};
pub use kmeans::{
    kmeans, kmeans_energy_medoids, kmeans_euclidean_mds, kmeans_exact_1d, kmeans_from, kmeans_gaussian,
    kmeans_hybrid, kmeanspp_seed, KMeansOptions, Medoid,
};
pub(crate) use kmeans::exact_1d_curves;
pub use medoid::{barycenter_shift, medoid_shift, pseudo_density, ShiftResult};

use crate::altdist::{MarginalSummary, TransformedSummary};
use crate::error::{Error, Result};
use crate::hybrid::{hybrid_barycenter, hybrid_distance_sq, HybridTransform};
use crate::linalg::{gaussian_barycenter, gaussian_wasserstein_sq, GaussianSummary};
use crate::transport::profile_dist_sq;

/// The geometry a clustering ran in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hybrid,
    Gaussian,
    EuclideanMds,
    Exact1d,
    Marginal,
    Transformed,
    EnergyMedoid,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::Gaussian => "gaussian",
            Mode::EuclideanMds => "euclidean_mds",
            Mode::Exact1d => "exact1d",
            Mode::Marginal => "marginal",
            Mode::Transformed => "transformed",
            Mode::EnergyMedoid => "energy_medoid",
        }
    }
}

/// Outcome of a partitioning run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult<C> {
    pub mode: Mode,
    pub labels: Vec<usize>,
    pub centroids: Vec<C>,
    /// Sum over items of the squared distance to their centroid.
    pub within_cost: f64,
    pub iterations: usize,
    /// Within-cluster cost after each assignment step.
    pub trace: Vec<f64>,
}

impl<C> ClusterResult<C> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Number of distinct labels actually used.
    pub fn cluster_count(&self) -> usize {
        count_labels(&self.labels)
    }
}

pub(crate) fn count_labels(labels: &[usize]) -> usize {
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Relabel so that labels appear in order of first occurrence.
pub(crate) fn canonical_labels(raw: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    raw.iter()
        .map(|r| {
            let next = map.len();
            *map.entry(*r).or_insert(next)
        })
        .collect()
}

/// Something k-means can average: a distance and a weighted barycenter.
pub trait Centroid: Clone + Send + Sync {
    fn dist_sq(&self, other: &Self) -> Result<f64>;
    fn barycenter(items: &[&Self], weights: &[f64]) -> Result<Self>;
}

impl Centroid for HybridTransform {
    fn dist_sq(&self, other: &Self) -> Result<f64> {
        Ok(hybrid_distance_sq(self, other)?.total_sq)
    }

    fn barycenter(items: &[&Self], weights: &[f64]) -> Result<Self> {
        hybrid_barycenter(items, weights)
    }
}

impl Centroid for GaussianSummary {
    fn dist_sq(&self, other: &Self) -> Result<f64> {
        gaussian_wasserstein_sq(self, other)
    }

    fn barycenter(items: &[&Self], weights: &[f64]) -> Result<Self> {
        gaussian_barycenter(items, weights)
    }
}

/// A point in Euclidean space.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub DVector<f64>);

impl Centroid for Point {
    fn dist_sq(&self, other: &Self) -> Result<f64> {
        Ok((&self.0 - &other.0).norm_squared())
    }

    fn barycenter(items: &[&Self], weights: &[f64]) -> Result<Self> {
        let mut acc = DVector::zeros(items[0].0.len());
        for (p, w) in items.iter().zip(weights) {
            acc += &p.0 * *w;
        }
        Ok(Point(acc))
    }
}

/// A 1D quantile function sampled on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileCurve(pub Vec<f64>);

impl Centroid for QuantileCurve {
    fn dist_sq(&self, other: &Self) -> Result<f64> {
        if self.0.len() != other.0.len() {
            return Err(Error::Size(self.0.len(), other.0.len()));
        }
        Ok(profile_dist_sq(&self.0, &other.0))
    }

    fn barycenter(items: &[&Self], weights: &[f64]) -> Result<Self> {
        let mut acc = vec![0.0; items[0].0.len()];
        for (c, w) in items.iter().zip(weights) {
            for (a, v) in acc.iter_mut().zip(&c.0) {
                *a += w * v;
            }
        }
        Ok(QuantileCurve(acc))
    }
}

impl Centroid for MarginalSummary {
    fn dist_sq(&self, other: &Self) -> Result<f64> {
        MarginalSummary::dist_sq(self, other)
    }

    fn barycenter(items: &[&Self], weights: &[f64]) -> Result<Self> {
        MarginalSummary::barycenter(items, weights)
    }
}

impl Centroid for TransformedSummary {
    fn dist_sq(&self, other: &Self) -> Result<f64> {
        TransformedSummary::dist_sq(self, other)
    }

    fn barycenter(items: &[&Self], weights: &[f64]) -> Result<Self> {
        TransformedSummary::barycenter(items, weights)
    }
}

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    entries: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        if entries.ncols() != n {
            return Err(Error::Dimension {
                expected: n,
                got: entries.ncols(),
            });
        }
        for i in 0..n {
            if entries[(i, i)] != 0.0 {
                return Err(Error::Format(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..i {
                let v = entries[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidCost(i, j));
                }
                if v != entries[(j, i)] {
                    return Err(Error::Format(format!("entries ({i}, {j}) and ({j}, {i}) differ")));
                }
            }
        }
        Ok(DistanceMatrix { entries })
    }

    /// Build from a squared-distance function evaluated once per unordered pair.
    /// Pairs are computed in parallel; the result does not depend on scheduling.
    pub fn from_sq_fn(n: usize, f: impl Fn(usize, usize) -> Result<f64> + Sync) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let values = pairs
            .par_iter()
            .map(|&(i, j)| f(i, j).map(|v| v.max(0.0).sqrt()))
            .collect::<Result<Vec<f64>>>()?;
        let mut entries = DMatrix::zeros(n, n);
        for (&(i, j), v) in pairs.iter().zip(values) {
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
        Ok(DistanceMatrix { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_matrix_validation() {
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).is_ok());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0])).is_err());
        assert!(DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])).is_err());
        let d = DistanceMatrix::from_sq_fn(3, |i, j| Ok(((i as f64) - (j as f64)).powi(2))).unwrap();
        assert_eq!(d.get(0, 2), 2.0);
        assert_eq!(d.get(2, 0), 2.0);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn canonical_relabeling() {
        assert_eq!(canonical_labels(&[5, 5, 2, 7, 2]), vec![0, 0, 1, 2, 1]);
        assert_eq!(count_labels(&[3, 1, 3]), 2);
    }
}
