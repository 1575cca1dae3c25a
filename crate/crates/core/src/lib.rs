//! Clustering of empirical distributions under a hybrid Wasserstein distance.
//!
//! Each dataset is summarized by its mean, its covariance and a shape block:
//! the values at shared reference anchors of an estimated transport map from a
//! pooled reference measure to the standardized dataset. Distances and
//! barycenters of these summaries are cheap, so k-means and related
//! procedures run over large collections of datasets.

pub mod altdist;
pub mod analyze;
pub mod cli;
pub mod cluster;
pub mod error;
pub mod hybrid;
pub mod linalg;
pub mod matching;
pub mod pipeline;
pub mod pretest;
pub mod reference;
pub mod rng;
pub mod simgen;
pub mod transport;

pub use error::{Error, Result};
