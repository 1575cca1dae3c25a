//! The `hywass` command line.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analyze::{classical_mds, read_distance_csv, write_coords_csv, write_distance_csv, write_points_csv};
use crate::cluster::{adjusted_rand_index, KMeansOptions, Mode};
use crate::error::{Error, Result};
use crate::hybrid::{hybrid_barycenter, materialize_barycenter, TransformOptions};
use crate::pipeline::{self, Algorithm, Manifest, ManifestEntry, Method, PipelineOptions, ShiftOptions};
use crate::pretest::{PretestMethod, PretestOptions};
use crate::simgen::{generate, Scenario, ScenarioSpec};
use crate::transport::Dataset;

#[derive(Debug, Parser)]
#[command(name = "hywass", version, about = "Cluster collections of datasets under Wasserstein-type distances")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a simulated collection, its manifest and true labels to a directory.
    Simulate(SimulateArgs),
    /// Pairwise distance matrix of a collection.
    Distances(DistancesArgs),
    /// Cluster a collection.
    Cluster(ClusterArgs),
    /// Within-cluster cost for k = 1..=kmax.
    Elbow(ElbowArgs),
    /// Classical scaling coordinates from a distance file.
    Mds(MdsArgs),
    /// Points approximating the hybrid barycenter of selected datasets.
    Barycenter(BarycenterArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    scenario: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Observations per dataset (scenario default when omitted).
    #[arg(long)]
    n: Option<usize>,
    /// Group means for ex1_1d_gauss3.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    ex1_means: Option<Vec<f64>>,
    /// Component separations for ex3_1d_mixtures.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    ex3_offsets: Option<Vec<f64>>,
    /// Shifted-component weights for ex3_1d_mixtures, each in [0, 1].
    #[arg(long, value_delimiter = ',', num_args = 3)]
    ex3_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Hybrid,
    Gaussian,
    Exact1d,
    Marginal,
    Transformed,
    Energy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Hybrid,
    Gaussian,
    EuclideanMds,
    Exact1d,
    Marginal,
    Transformed,
    EnergyMedoid,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Kmeans,
    MedoidShift,
    BarycenterShift,
    SingleLinkage,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum)]
enum PretestArg {
    Off,
    Energy,
    Crossmatch,
}

/// Options shared by every command that reads a manifest.
#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Anchors and subsample size (defaults to min(100, smallest n)).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_enum, default_value_t = PretestArg::Off)]
    pretest: PretestArg,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    /// Permutation resamples for the energy pre-test.
    #[arg(long, default_value_t = 499)]
    permutations: usize,
    /// Trimming level for the 1D quantile distance.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Quantile grid size.
    #[arg(long, default_value_t = 512)]
    grid: usize,
    /// Largest monomial degree for the transformed distance.
    #[arg(long, default_value_t = 4)]
    degree: usize,
    /// Embedding dimension for euclidean_mds.
    #[arg(long, default_value_t = 2)]
    mds_dims: usize,
}

#[derive(Debug, Args)]
struct DistancesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    method: ModeArg,
    /// Number of clusters (k-means and single linkage).
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, value_enum, default_value_t = AlgorithmArg::Kmeans)]
    algorithm: AlgorithmArg,
    /// Neighbour count for medoid-shift and barycenter-shift.
    #[arg(long, default_value_t = 10)]
    r: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ElbowArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    method: ModeArg,
    #[arg(long, default_value_t = 10)]
    kmax: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MdsArgs {
    #[arg(long)]
    distances: PathBuf,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    /// A cluster result whose labels fill the cluster_label column.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BarycenterArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', required = true)]
    ids: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Parse `args` and run the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(Error::InvalidParam("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidParam(e.to_string()))
            .and_then(|pool| pool.install(|| execute(cli.command))),
        None => execute(cli.command),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Distances(a) => distances(a),
        Command::Cluster(a) => cluster(a),
        Command::Elbow(a) => elbow(a),
        Command::Mds(a) => mds(a),
        Command::Barycenter(a) => barycenter(a),
    }
}

/// Write `path` through a temporary sibling, removing it on failure.
fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParam(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let scenario: Scenario = a.scenario.parse()?;
    let mut spec = ScenarioSpec::new(scenario, a.seed);
    if let Some(n) = a.n {
        spec.n_per_dataset = n;
    }
    if let Some(v) = a.ex1_means {
        spec.ex1_means = [v[0], v[1], v[2]];
    }
    if let Some(v) = a.ex3_offsets {
        spec.ex3_offsets = [v[0], v[1], v[2]];
    }
    if let Some(v) = a.ex3_weights {
        spec.ex3_weights = [v[0], v[1], v[2]];
    }
    let sim = generate(&spec)?;
    fs::create_dir_all(&a.out)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        let mut entries = Vec::with_capacity(sim.datasets.len());
        for (d, &label) in sim.datasets.iter().zip(&sim.labels) {
            let file = format!("{}.csv", d.id);
            let path = a.out.join(&file);
            write_atomic(&path, |w| write_points_csv(w, &d.points))?;
            written.push(path);
            entries.push(ManifestEntry {
                id: d.id.clone(),
                path: file.into(),
                true_label: Some(label),
            });
        }
        let truth = a.out.join("truth.csv");
        write_atomic(&truth, |w| {
            writeln!(w, "id,label")?;
            for (d, l) in sim.datasets.iter().zip(&sim.labels) {
                writeln!(w, "{},{l}", d.id)?;
            }
            Ok(())
        })?;
        written.push(truth);
        let manifest = a.out.join("manifest.json");
        write_json(&manifest, &Manifest { datasets: entries })?;
        written.push(manifest);
        Ok(())
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}

fn load(common: &Common) -> Result<(Manifest, Vec<Dataset>, PipelineOptions)> {
    let manifest = Manifest::read(&common.manifest)?;
    let base = common.manifest.parent().unwrap_or_else(|| Path::new("."));
    let datasets = manifest.load(base)?;
    let smallest = datasets.iter().map(Dataset::n).min().unwrap_or(0);
    let pretest = match common.pretest {
        PretestArg::Off => None,
        p => Some(PretestOptions {
            method: if p == PretestArg::Energy { PretestMethod::EnergyPermutation } else { PretestMethod::Crossmatch },
            alpha: common.alpha,
            permutations: common.permutations,
        }),
    };
    let opts = PipelineOptions {
        transform: TransformOptions {
            m: common.m.unwrap_or(smallest.min(100)),
            seed: common.seed,
        },
        pretest,
        delta: common.delta,
        grid: common.grid,
        marginal: Default::default(),
        degree: common.degree,
        mds_dims: common.mds_dims,
    };
    Ok((manifest, datasets, opts))
}

fn method(m: MethodArg) -> Method {
    match m {
        MethodArg::Hybrid => Method::Hybrid,
        MethodArg::Gaussian => Method::Gaussian,
        MethodArg::Exact1d => Method::Exact1d,
        MethodArg::Marginal => Method::Marginal,
        MethodArg::Transformed => Method::Transformed,
        MethodArg::Energy => Method::Energy,
    }
}

fn mode(m: ModeArg) -> Mode {
    match m {
        ModeArg::Hybrid => Mode::Hybrid,
        ModeArg::Gaussian => Mode::Gaussian,
        ModeArg::EuclideanMds => Mode::EuclideanMds,
        ModeArg::Exact1d => Mode::Exact1d,
        ModeArg::Marginal => Mode::Marginal,
        ModeArg::Transformed => Mode::Transformed,
        ModeArg::EnergyMedoid => Mode::EnergyMedoid,
    }
}

fn distances(a: DistancesArgs) -> Result<()> {
    let (manifest, datasets, opts) = load(&a.common)?;
    let d = pipeline::distance_matrix(&datasets, method(a.method), &opts)?;
    write_atomic(&a.out, |w| write_distance_csv(w, &manifest.ids(), &d))
}

#[derive(Debug, Serialize)]
struct ClusterReport {
    mode: Mode,
    algorithm: Algorithm,
    k: usize,
    seed: u64,
    labels: Vec<usize>,
    cluster_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    within_cost: Option<f64>,
    iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pretest_skipped: Option<usize>,
}

fn kmeans_options(k: usize, seed: u64, restarts: usize, max_iter: usize) -> KMeansOptions {
    KMeansOptions {
        restarts,
        max_iter,
        ..KMeansOptions::new(k, seed)
    }
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let (manifest, datasets, opts) = load(&a.common)?;
    let algorithm = match a.algorithm {
        AlgorithmArg::Kmeans => Algorithm::Kmeans,
        AlgorithmArg::MedoidShift => Algorithm::MedoidShift,
        AlgorithmArg::BarycenterShift => Algorithm::BarycenterShift,
        AlgorithmArg::SingleLinkage => Algorithm::SingleLinkage,
    };
    let kopts = kmeans_options(a.k, a.common.seed, a.restarts, a.max_iter);
    let shift = ShiftOptions {
        r: a.r,
        max_iter: a.max_iter,
    };
    let c = pipeline::cluster_with(&datasets, mode(a.method), algorithm, a.k, &shift, &opts, &kopts)?;
    let report = ClusterReport {
        mode: c.mode,
        algorithm: c.algorithm,
        k: a.k,
        seed: a.common.seed,
        ari: manifest.truth().map(|t| adjusted_rand_index(&c.labels, &t)),
        labels: c.labels,
        cluster_count: c.cluster_count,
        within_cost: c.within_cost,
        iterations: c.iterations,
        pretest_skipped: c.pretest_skipped,
    };
    write_json(&a.out, &report)
}

fn elbow(a: ElbowArgs) -> Result<()> {
    let (_, datasets, opts) = load(&a.common)?;
    let kopts = kmeans_options(1, a.common.seed, a.restarts, a.max_iter);
    let curve = pipeline::elbow(&datasets, mode(a.method), a.kmax, &opts, &kopts)?;
    write_atomic(&a.out, |w| {
        writeln!(w, "k,within_cost,inverse")?;
        for p in &curve {
            writeln!(w, "{},{},{}", p.k, p.within_cost, p.inverse)?;
        }
        Ok(())
    })
}

#[derive(Debug, serde::Deserialize)]
struct LabelsOnly {
    labels: Vec<usize>,
}

fn mds(a: MdsArgs) -> Result<()> {
    let (ids, d) = read_distance_csv(fs::File::open(&a.distances)?)?;
    let labels = match &a.labels {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let l: LabelsOnly =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
            Some(l.labels)
        }
        None => None,
    };
    let emb = classical_mds(&d, a.dims)?;
    write_atomic(&a.out, |w| write_coords_csv(w, &ids, &emb, labels.as_deref()))
}

fn barycenter(a: BarycenterArgs) -> Result<()> {
    let (manifest, datasets, opts) = load(&a.common)?;
    let build = pipeline::hybrid_build(&datasets, &opts)?;
    let ids = manifest.ids();
    let chosen = a
        .ids
        .iter()
        .map(|id| {
            ids.iter()
                .position(|x| x == id)
                .map(|j| &build.transforms[j])
                .ok_or_else(|| Error::InvalidParam(format!("id {id:?} is not in the manifest")))
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = vec![1.0 / chosen.len() as f64; chosen.len()];
    let bary = hybrid_barycenter(&chosen, &weights)?;
    let points = materialize_barycenter(&bary, &build.reference)?;
    write_atomic(&a.out, |w| write_points_csv(w, &points.points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn bad_flags_exit_nonzero() {
        assert_eq!(run(["hywass", "cluster", "--bogus"]), 2);
        assert_eq!(run(["hywass", "simulate", "nope", "--out", "/nonexistent/x"]), 1);
    }

    #[test]
    fn failed_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x.csv");
        let r = write_atomic(&out, |w| {
            writeln!(w, "partial")?;
            Err(Error::Format("boom".into()))
        });
        assert!(r.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
