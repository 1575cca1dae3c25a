//! End-to-end runs over a collection of datasets: manifests, distance
//! matrices, clustering and elbow curves in every supported geometry.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::altdist::{energy_distance, MarginalOptions, MarginalSummary, TransformedSummary};
use crate::analyze::read_points_csv;
use crate::cluster::{
    barycenter_shift, elbow_curve, hierarchical_single_linkage, kmeans, medoid_shift, Centroid,
    DistanceMatrix, ElbowPoint, KMeansOptions, Mode, Point, QuantileCurve,
};
use crate::cluster::{exact_1d_curves, Medoid};
use crate::error::{Error, Result};
use crate::hybrid::{build_transforms, hybrid_distance_sq, HybridTransform, TransformOptions};
use crate::linalg::GaussianSummary;
use crate::pretest::{build_transforms_pretested, PretestOptions, PretestOutcome};
use crate::reference::ReferenceMeasure;
use crate::transport::{empirical_w2_sq, Dataset};

/// Distance used to fill a pairwise matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hybrid,
    Gaussian,
    /// Trimmed 1D Wasserstein distance on a quantile grid; 1D data only.
    Exact1d,
    Marginal,
    Transformed,
    /// Square root of the energy distance.
    Energy,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Hybrid => "hybrid",
            Method::Gaussian => "gaussian",
            Method::Exact1d => "exact1d",
            Method::Marginal => "marginal",
            Method::Transformed => "transformed",
            Method::Energy => "energy",
        }
    }
}

/// Clustering procedure run over the chosen geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Kmeans,
    MedoidShift,
    BarycenterShift,
    SingleLinkage,
}

/// Settings shared by every stage.
#[derive(Debug, Clone, Copy)]
pub struct PipelineOptions {
    pub transform: TransformOptions,
    pub pretest: Option<PretestOptions>,
    /// Trimming level for the 1D quantile distance.
    pub delta: f64,
    /// Quantile grid size for the 1D quantile distance.
    pub grid: usize,
    pub marginal: MarginalOptions,
    /// Largest monomial degree for the transformed distance.
    pub degree: usize,
    /// Embedding dimension for the MDS mode.
    pub mds_dims: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            transform: TransformOptions::default(),
            pretest: None,
            delta: 0.01,
            grid: 512,
            marginal: MarginalOptions::default(),
            degree: 4,
            mds_dims: 2,
        }
    }
}

/// Hybrid transforms of a collection, with the pre-test outcomes when enabled.
#[derive(Debug, Clone)]
pub struct HybridBuild {
    pub reference: ReferenceMeasure,
    pub transforms: Vec<HybridTransform>,
    pub pretest: Option<Vec<PretestOutcome>>,
}

pub fn hybrid_build(datasets: &[Dataset], opts: &PipelineOptions) -> Result<HybridBuild> {
    match &opts.pretest {
        Some(p) => {
            let (reference, transforms, outcomes) = build_transforms_pretested(datasets, opts.transform, p)?;
            Ok(HybridBuild {
                reference,
                transforms,
                pretest: Some(outcomes),
            })
        }
        None => {
            let (reference, transforms) = build_transforms(datasets, opts.transform)?;
            Ok(HybridBuild {
                reference,
                transforms,
                pretest: None,
            })
        }
    }
}

fn pairwise<C: Centroid>(items: &[C]) -> Result<DistanceMatrix> {
    DistanceMatrix::from_sq_fn(items.len(), |i, j| items[i].dist_sq(&items[j]))
}

fn check_collection(datasets: &[Dataset]) -> Result<()> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::InsufficientData("no datasets".into()))?;
    for d in datasets {
        if d.dim() != first.dim() {
            return Err(Error::Dimension {
                expected: first.dim(),
                got: d.dim(),
            });
        }
    }
    Ok(())
}

/// Pairwise distances under `method`.
pub fn distance_matrix(datasets: &[Dataset], method: Method, opts: &PipelineOptions) -> Result<DistanceMatrix> {
    check_collection(datasets)?;
    match method {
        Method::Hybrid => {
            let t = hybrid_build(datasets, opts)?.transforms;
            DistanceMatrix::from_sq_fn(t.len(), |i, j| Ok(hybrid_distance_sq(&t[i], &t[j])?.total_sq))
        }
        Method::Energy => DistanceMatrix::from_sq_fn(datasets.len(), |i, j| energy_distance(&datasets[i], &datasets[j])),
        _ => match items(datasets, method_mode(method), opts)? {
            Items::Gaussian(v) => pairwise(&v),
            Items::Curves(v) => pairwise(&v),
            Items::Marginal(v) => pairwise(&v),
            Items::Transformed(v) => pairwise(&v),
            _ => unreachable!("method has a direct summary"),
        },
    }
}

fn method_mode(method: Method) -> Mode {
    match method {
        Method::Hybrid => Mode::Hybrid,
        Method::Gaussian => Mode::Gaussian,
        Method::Exact1d => Mode::Exact1d,
        Method::Marginal => Mode::Marginal,
        Method::Transformed => Mode::Transformed,
        Method::Energy => Mode::EnergyMedoid,
    }
}

/// The distance that the medoid-shift algorithm uses for each mode.
fn mode_method(mode: Mode) -> Method {
    match mode {
        Mode::Hybrid => Method::Hybrid,
        Mode::Gaussian => Method::Gaussian,
        Mode::Exact1d => Method::Exact1d,
        Mode::Marginal => Method::Marginal,
        Mode::Transformed => Method::Transformed,
        Mode::EnergyMedoid => Method::Energy,
        Mode::EuclideanMds => Method::Exact1d,
    }
}

/// Exact Wasserstein distances: quantile functions in 1D, optimal
/// assignment otherwise (equal sample sizes required).
pub fn exact_distances(datasets: &[Dataset], opts: &PipelineOptions) -> Result<DistanceMatrix> {
    check_collection(datasets)?;
    if datasets[0].dim() == 1 {
        return pairwise(&exact_1d_curves(datasets, opts.delta, opts.grid)?);
    }
    DistanceMatrix::from_sq_fn(datasets.len(), |i, j| empirical_w2_sq(&datasets[i], &datasets[j]))
}

enum Items {
    Hybrid(Vec<HybridTransform>),
    Gaussian(Vec<GaussianSummary>),
    Points(Vec<Point>),
    Curves(Vec<QuantileCurve>),
    Marginal(Vec<MarginalSummary>),
    Transformed(Vec<TransformedSummary>),
    Medoids(Vec<Medoid>),
}

macro_rules! with_items {
    ($items:expr, $v:ident => $body:expr) => {
        match $items {
            Items::Hybrid($v) => $body,
            Items::Gaussian($v) => $body,
            Items::Points($v) => $body,
            Items::Curves($v) => $body,
            Items::Marginal($v) => $body,
            Items::Transformed($v) => $body,
            Items::Medoids($v) => $body,
        }
    };
}

fn items(datasets: &[Dataset], mode: Mode, opts: &PipelineOptions) -> Result<Items> {
    Ok(match mode {
        Mode::Hybrid => unreachable!("hybrid items carry pre-test outcomes"),
        Mode::Gaussian => Items::Gaussian(datasets.iter().map(|d| GaussianSummary::from_points(&d.points)).collect()),
        Mode::Exact1d => Items::Curves(exact_1d_curves(datasets, opts.delta, opts.grid)?),
        Mode::Marginal => Items::Marginal(
            datasets
                .iter()
                .map(|d| MarginalSummary::new(d, opts.marginal))
                .collect::<Result<_>>()?,
        ),
        Mode::Transformed => Items::Transformed(
            datasets
                .iter()
                .map(|d| TransformedSummary::new(d, opts.degree))
                .collect::<Result<_>>()?,
        ),
        Mode::EuclideanMds => {
            let d = exact_distances(datasets, opts)?;
            let dims = opts.mds_dims.min(d.n().saturating_sub(1)).max(1);
            let emb = crate::analyze::classical_mds(&d, dims)?;
            Items::Points(
                (0..emb.coords.nrows())
                    .map(|i| Point(emb.coords.row(i).transpose()))
                    .collect(),
            )
        }
        Mode::EnergyMedoid => {
            let d = distance_matrix(datasets, Method::Energy, opts)?;
            Items::Medoids(Medoid::family(d.as_matrix().map(|v| v * v)))
        }
    })
}

fn prepare(datasets: &[Dataset], mode: Mode, opts: &PipelineOptions) -> Result<(Items, Option<Vec<PretestOutcome>>)> {
    check_collection(datasets)?;
    if mode == Mode::Hybrid {
        let b = hybrid_build(datasets, opts)?;
        return Ok((Items::Hybrid(b.transforms), b.pretest));
    }
    Ok((items(datasets, mode, opts)?, None))
}

/// Labels and costs from any clustering run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    pub mode: Mode,
    pub algorithm: Algorithm,
    pub labels: Vec<usize>,
    pub cluster_count: usize,
    /// `S_k` for k-means; `None` for mode-seeking and merging procedures.
    pub within_cost: Option<f64>,
    pub iterations: usize,
    /// Number of datasets whose shape term the pre-test skipped.
    pub pretest_skipped: Option<usize>,
}

/// Settings for the non-k-means procedures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftOptions {
    /// Neighbour count for the shift procedures.
    pub r: usize,
    pub max_iter: usize,
}

/// k-means in the geometry of `mode`.
pub fn cluster(datasets: &[Dataset], mode: Mode, opts: &PipelineOptions, kopts: &KMeansOptions) -> Result<Clustering> {
    let (items, pretest) = prepare(datasets, mode, opts)?;
    let (labels, within, iterations) = with_items!(items, v => {
        let r = kmeans(&v, mode, kopts)?;
        (r.labels, r.within_cost, r.iterations)
    });
    Ok(Clustering {
        mode,
        algorithm: Algorithm::Kmeans,
        cluster_count: crate::cluster::count_labels(&labels),
        labels,
        within_cost: Some(within),
        iterations,
        pretest_skipped: skipped(&pretest),
    })
}

fn skipped(pretest: &Option<Vec<PretestOutcome>>) -> Option<usize> {
    pretest.as_ref().map(|o| o.iter().filter(|x| !x.reject).count())
}

/// Medoid-shift, barycenter-shift or single linkage cut at `k` clusters.
pub fn cluster_with(
    datasets: &[Dataset],
    mode: Mode,
    algorithm: Algorithm,
    k: usize,
    shift: &ShiftOptions,
    opts: &PipelineOptions,
    kopts: &KMeansOptions,
) -> Result<Clustering> {
    match algorithm {
        Algorithm::Kmeans => cluster(datasets, mode, opts, kopts),
        Algorithm::MedoidShift => {
            let (d, pretest) = if mode == Mode::Hybrid {
                let b = hybrid_build(datasets, opts)?;
                let t = b.transforms;
                let d = DistanceMatrix::from_sq_fn(t.len(), |i, j| Ok(hybrid_distance_sq(&t[i], &t[j])?.total_sq))?;
                (d, b.pretest)
            } else if mode == Mode::EuclideanMds {
                (exact_distances(datasets, opts)?, None)
            } else {
                (distance_matrix(datasets, mode_method(mode), opts)?, None)
            };
            let res = medoid_shift(&d, shift.r, shift.max_iter)?;
            Ok(Clustering {
                mode,
                algorithm,
                cluster_count: res.cluster_count(),
                labels: res.labels,
                within_cost: None,
                iterations: res.iterations,
                pretest_skipped: skipped(&pretest),
            })
        }
        Algorithm::BarycenterShift => {
            let (items, pretest) = prepare(datasets, mode, opts)?;
            let res = with_items!(items, v => barycenter_shift(&v, shift.r, shift.max_iter)?);
            Ok(Clustering {
                mode,
                algorithm,
                cluster_count: res.cluster_count(),
                labels: res.labels,
                within_cost: None,
                iterations: res.iterations,
                pretest_skipped: skipped(&pretest),
            })
        }
        Algorithm::SingleLinkage => {
            let (items, pretest) = prepare(datasets, mode, opts)?;
            let sizes: Vec<usize> = datasets.iter().map(Dataset::n).collect();
            let tree = with_items!(items, v => hierarchical_single_linkage(&v, &sizes)?);
            let labels = tree.cut(k)?;
            Ok(Clustering {
                mode,
                algorithm,
                cluster_count: crate::cluster::count_labels(&labels),
                labels,
                within_cost: None,
                iterations: tree.merges.len(),
                pretest_skipped: skipped(&pretest),
            })
        }
    }
}

/// Elbow curve `S_1..S_kmax` in the geometry of `mode`.
pub fn elbow(
    datasets: &[Dataset],
    mode: Mode,
    kmax: usize,
    opts: &PipelineOptions,
    kopts: &KMeansOptions,
) -> Result<Vec<ElbowPoint>> {
    let (items, _) = prepare(datasets, mode, opts)?;
    with_items!(items, v => elbow_curve(&v, mode, kmax, kopts))
}

/// One dataset listed in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// CSV file, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
}

/// A collection of datasets on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub datasets: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|err| Error::Io(std::io::Error::new(err.kind(), format!("{}: {err}", path.display()))))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if m.datasets.is_empty() {
            return Err(Error::Format(format!("{}: manifest lists no datasets", path.display())));
        }
        let mut ids: Vec<&str> = m.datasets.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Format(format!("{}: duplicate id {:?}", path.display(), w[0])));
        }
        Ok(m)
    }

    /// Load every listed dataset, resolving paths against `base`.
    pub fn load(&self, base: &Path) -> Result<Vec<Dataset>> {
        self.datasets
            .iter()
            .map(|e| {
                let p = if e.path.is_absolute() { e.path.clone() } else { base.join(&e.path) };
                let file = fs::File::open(&p).map_err(|err| {
                    Error::Io(std::io::Error::new(err.kind(), format!("{}: {err}", p.display())))
                })?;
                let points = read_points_csv(file).map_err(|err| match err {
                    Error::Format(msg) => Error::Format(format!("{}: {msg}", p.display())),
                    Error::InsufficientData(msg) => Error::InsufficientData(format!("{}: {msg}", p.display())),
                    other => other,
                })?;
                Dataset::new(e.id.clone(), points)
            })
            .collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.datasets.iter().map(|e| e.id.clone()).collect()
    }

    /// True labels, when every entry has one.
    pub fn truth(&self) -> Option<Vec<usize>> {
        self.datasets.iter().map(|e| e.true_label).collect()
    }
}
