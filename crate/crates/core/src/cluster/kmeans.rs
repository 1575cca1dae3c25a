use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::{Centroid, ClusterResult, DistanceMatrix, Mode, Point, QuantileCurve};
use crate::analyze::classical_mds;
use crate::error::{Error, Result};
use crate::hybrid::HybridTransform;
use crate::linalg::GaussianSummary;
use crate::rng;
use crate::transport::{quantile_profile, Dataset};

/// Settings shared by every k-means variant.
#[derive(Debug, Clone, Copy)]
pub struct KMeansOptions {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Independent k-means++ restarts; the lowest within-cluster cost wins.
    pub restarts: usize,
    /// Stop once the relative cost improvement falls below this.
    pub tol: f64,
}

impl KMeansOptions {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansOptions {
            k,
            seed,
            max_iter: 100,
            restarts: 5,
            tol: 1e-8,
        }
    }
}

/// k-means++ seeding: the first index uniformly, then each next index with
/// probability proportional to its squared distance to the nearest seed.
pub fn kmeanspp_seed(
    dist_sq: impl Fn(usize, usize) -> Result<f64> + Sync,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::InvalidParam(format!("cannot choose {k} seeds among {n} items")));
    }
    let mut stream = rng::stream(seed);
    let first = stream.random_range(0..n);
    let mut chosen = vec![first];
    let mut is_chosen = vec![false; n];
    is_chosen[first] = true;
    let mut nearest: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| if i == first { Ok(0.0) } else { dist_sq(i, first) })
        .collect::<Result<_>>()?;
    while chosen.len() < k {
        let total: f64 = (0..n).filter(|&i| !is_chosen[i]).map(|i| nearest[i]).sum();
        let next = if total > 0.0 {
            let target = stream.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for i in (0..n).filter(|&i| !is_chosen[i] && nearest[i] > 0.0) {
                acc += nearest[i];
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a candidate")
        } else {
            (0..n).find(|&i| !is_chosen[i]).expect("k <= n")
        };
        chosen.push(next);
        is_chosen[next] = true;
        let fresh: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| if is_chosen[i] { Ok(0.0) } else { dist_sq(i, next) })
            .collect::<Result<_>>()?;
        for i in 0..n {
            nearest[i] = if is_chosen[i] { 0.0 } else { nearest[i].min(fresh[i]) };
        }
    }
    Ok(chosen)
}

/// Nearest centroid per item (ties to the lower centroid index) and its squared distance.
fn assign<C: Centroid>(items: &[C], centroids: &[C]) -> Result<(Vec<usize>, Vec<f64>)> {
    let pairs = items
        .par_iter()
        .map(|item| {
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = item.dist_sq(centroid)?;
                if d < best.1 {
                    best = (c, d);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairs.into_iter().unzip())
}

/// Give every empty cluster the item farthest from its own centroid.
fn repair_empty<C: Centroid>(items: &[C], centroids: &mut [C], labels: &mut [usize], dists: &mut [f64]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..items.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n leaves a cluster with two members");
        labels[donor] = empty;
        dists[donor] = 0.0;
        centroids[empty] = items[donor].clone();
    }
}

fn update<C: Centroid>(items: &[C], labels: &[usize], k: usize) -> Result<Vec<C>> {
    (0..k)
        .into_par_iter()
        .map(|c| {
            let members: Vec<&C> = items.iter().zip(labels).filter(|(_, &l)| l == c).map(|(x, _)| x).collect();
            let w = vec![1.0 / members.len() as f64; members.len()];
            C::barycenter(&members, &w)
        })
        .collect()
}

/// One Lloyd run from the given starting centroids.
pub fn kmeans_from<C: Centroid>(items: &[C], mode: Mode, start: Vec<C>, opts: &KMeansOptions) -> Result<ClusterResult<C>> {
    let k = start.len();
    if k == 0 || k > items.len() {
        return Err(Error::InvalidParam(format!("cannot form {k} clusters from {} items", items.len())));
    }
    let mut centroids = start;
    let (mut labels, mut dists) = assign(items, &centroids)?;
    repair_empty(items, &mut centroids, &mut labels, &mut dists);
    let mut cost: f64 = dists.iter().sum();
    let mut trace = vec![cost];
    let mut iterations = 0;
    while iterations < opts.max_iter && cost > 0.0 {
        iterations += 1;
        let mut next = update(items, &labels, k)?;
        let (mut next_labels, mut next_dists) = assign(items, &next)?;
        repair_empty(items, &mut next, &mut next_labels, &mut next_dists);
        let next_cost: f64 = next_dists.iter().sum();
        let changed = next_labels != labels;
        let improvement = (cost - next_cost) / cost;
        centroids = next;
        labels = next_labels;
        cost = next_cost;
        trace.push(cost);
        if !changed || improvement < opts.tol {
            break;
        }
    }
    Ok(ClusterResult {
        mode,
        labels,
        centroids,
        within_cost: cost,
        iterations,
        trace,
    })
}

/// Best of `opts.restarts` k-means++ seeded Lloyd runs.
pub fn kmeans<C: Centroid>(items: &[C], mode: Mode, opts: &KMeansOptions) -> Result<ClusterResult<C>> {
    let n = items.len();
    if opts.k == 0 || opts.k > n {
        return Err(Error::InvalidParam(format!("cannot form {} clusters from {n} items", opts.k)));
    }
    let runs = (0..opts.restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let seed = rng::indexed_seed(opts.seed, rng::RESTART, r);
            let seeds = kmeanspp_seed(|i, j| items[i].dist_sq(&items[j]), n, opts.k, seed)?;
            let start = seeds.iter().map(|&i| items[i].clone()).collect();
            kmeans_from(items, mode, start, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(best_run(runs))
}

/// Lowest cost; ties go to the earlier run.
pub(crate) fn best_run<C>(runs: Vec<ClusterResult<C>>) -> ClusterResult<C> {
    runs.into_iter()
        .reduce(|best, r| if r.within_cost < best.within_cost { r } else { best })
        .expect("at least one run")
}

pub fn kmeans_hybrid(transforms: &[HybridTransform], opts: &KMeansOptions) -> Result<ClusterResult<HybridTransform>> {
    kmeans(transforms, Mode::Hybrid, opts)
}

pub fn kmeans_gaussian(summaries: &[GaussianSummary], opts: &KMeansOptions) -> Result<ClusterResult<GaussianSummary>> {
    kmeans(summaries, Mode::Gaussian, opts)
}

/// Embed by classical scaling into `dims` dimensions, then cluster the points.
pub fn kmeans_euclidean_mds(d: &DistanceMatrix, dims: usize, opts: &KMeansOptions) -> Result<ClusterResult<Point>> {
    let emb = classical_mds(d, dims)?;
    let points: Vec<Point> = (0..emb.coords.nrows())
        .map(|i| Point(DVector::from_iterator(emb.coords.ncols(), emb.coords.row(i).iter().copied())))
        .collect();
    kmeans(&points, Mode::EuclideanMds, opts)
}

/// Exact 1D Wasserstein k-means on trimmed quantile functions.
pub fn kmeans_exact_1d(
    datasets: &[Dataset],
    delta: f64,
    grid: usize,
    opts: &KMeansOptions,
) -> Result<ClusterResult<QuantileCurve>> {
    let curves = exact_1d_curves(datasets, delta, grid)?;
    kmeans(&curves, Mode::Exact1d, opts)
}

pub(crate) fn exact_1d_curves(datasets: &[Dataset], delta: f64, grid: usize) -> Result<Vec<QuantileCurve>> {
    datasets
        .iter()
        .map(|x| Ok(QuantileCurve(quantile_profile(&x.values_1d()?, delta, grid)?)))
        .collect()
}

/// An item identified by its index into a shared table of squared
/// dissimilarities; its "barycenter" is the member minimizing the weighted
/// dissimilarity to the others, which turns Lloyd iterations into k-medoids.
#[derive(Debug, Clone, PartialEq)]
pub struct Medoid {
    pub index: usize,
    table: Arc<DMatrix<f64>>,
}

impl Medoid {
    pub fn family(table: DMatrix<f64>) -> Vec<Medoid> {
        let table = Arc::new(table);
        (0..table.nrows())
            .map(|index| Medoid {
                index,
                table: Arc::clone(&table),
            })
            .collect()
    }
}

impl Centroid for Medoid {
    fn dist_sq(&self, other: &Self) -> Result<f64> {
        Ok(self.table[(self.index, other.index)])
    }

    fn barycenter(items: &[&Self], weights: &[f64]) -> Result<Self> {
        let score = |m: &Medoid| -> f64 {
            items
                .iter()
                .zip(weights)
                .map(|(x, w)| w * m.table[(m.index, x.index)])
                .sum()
        };
        let mut best = items[0];
        let mut best_score = score(best);
        for m in &items[1..] {
            let s = score(m);
            if s < best_score {
                best = m;
                best_score = s;
            }
        }
        Ok(best.clone())
    }
}

/// k-medoids over a matrix of energy distances (which behave as squared metrics).
pub fn kmeans_energy_medoids(energy: &DMatrix<f64>, opts: &KMeansOptions) -> Result<ClusterResult<Medoid>> {
    if energy.nrows() != energy.ncols() {
        return Err(Error::Dimension {
            expected: energy.nrows(),
            got: energy.ncols(),
        });
    }
    kmeans(&Medoid::family(energy.clone()), Mode::EnergyMedoid, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::adjusted_rand_index;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand_distr::StandardNormal;

    fn blobs(seed: u64, centers: &[(f64, f64)], per: usize, spread: f64) -> (Vec<Point>, Vec<usize>) {
        let mut g = rng::stream(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, &(x, y)) in centers.iter().enumerate() {
            for _ in 0..per {
                let dx: f64 = g.sample(StandardNormal);
                let dy: f64 = g.sample(StandardNormal);
                pts.push(Point(DVector::from_vec(vec![x + spread * dx, y + spread * dy])));
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn seeding_edge_cases() {
        let (pts, _) = blobs(1, &[(0.0, 0.0)], 6, 1.0);
        let d = |i: usize, j: usize| pts[i].dist_sq(&pts[j]);
        assert_eq!(kmeanspp_seed(d, 6, 1, 3).unwrap().len(), 1);
        let mut all = kmeanspp_seed(d, 6, 6, 3).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
        assert!(kmeanspp_seed(d, 6, 7, 3).is_err());
        assert!(kmeanspp_seed(d, 6, 0, 3).is_err());
    }

    #[test]
    fn seeding_splits_far_groups() {
        let (pts, truth) = blobs(2, &[(0.0, 0.0), (100.0, 0.0)], 10, 1.0);
        let d = |i: usize, j: usize| pts[i].dist_sq(&pts[j]);
        let split = (0..200)
            .filter(|&s| {
                let seeds = kmeanspp_seed(d, pts.len(), 2, s).unwrap();
                truth[seeds[0]] != truth[seeds[1]]
            })
            .count();
        assert!(split >= 190, "{split}");
    }

    #[test]
    fn recovers_blobs_and_is_monotone() {
        let (pts, truth) = blobs(3, &[(0.0, 0.0), (8.0, 0.0), (0.0, 8.0)], 15, 1.0);
        let res = kmeans(&pts, Mode::EuclideanMds, &KMeansOptions::new(3, 5)).unwrap();
        assert_eq!(adjusted_rand_index(&res.labels, &truth), 1.0);
        assert!(res.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert_eq!(res.within_cost, *res.trace.last().unwrap());
    }

    #[test]
    fn k_equals_n_has_zero_cost() {
        let (pts, _) = blobs(4, &[(0.0, 0.0)], 7, 1.0);
        let res = kmeans(&pts, Mode::EuclideanMds, &KMeansOptions::new(7, 1)).unwrap();
        assert_eq!(res.within_cost, 0.0);
        assert_eq!(res.cluster_count(), 7);
    }

    #[test]
    fn duplicates_do_not_leave_empty_clusters() {
        let pts = vec![Point(DVector::from_vec(vec![1.0])); 5];
        let res = kmeans(&pts, Mode::EuclideanMds, &KMeansOptions::new(3, 1)).unwrap();
        assert_eq!(res.cluster_count(), 3);
        assert_eq!(res.within_cost, 0.0);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let (pts, _) = blobs(5, &[(0.0, 0.0), (3.0, 0.0), (0.0, 3.0)], 20, 1.0);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| kmeans(&pts, Mode::EuclideanMds, &KMeansOptions::new(3, 9)).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.within_cost.to_bits(), b.within_cost.to_bits());
    }

    #[test]
    fn exact_1d_centroid_of_shifted_normals() {
        let mut g = rng::stream(6);
        let n = 4000;
        let a: Vec<f64> = (0..n).map(|_| g.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = (0..n).map(|_| g.sample::<f64, _>(StandardNormal) + 4.0).collect();
        let ds = vec![Dataset::from_values("a", &a).unwrap(), Dataset::from_values("b", &b).unwrap()];
        let res = kmeans_exact_1d(&ds, 0.01, 512, &KMeansOptions::new(1, 1)).unwrap();
        let target: Vec<f64> = (0..n).map(|_| g.sample::<f64, _>(StandardNormal) + 2.0).collect();
        let expected = quantile_profile(&target, 0.01, 512).unwrap();
        let worst = res.centroids[0]
            .0
            .iter()
            .zip(&expected)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.25, "{worst}");

        let same = vec![ds[0].clone(), ds[0].clone()];
        let res = kmeans_exact_1d(&same, 0.01, 64, &KMeansOptions::new(1, 1)).unwrap();
        assert_eq!(res.centroids[0].0, quantile_profile(&a, 0.01, 64).unwrap());

        let two_d = Dataset::new("x", DMatrix::zeros(3, 2)).unwrap();
        assert!(matches!(
            kmeans_exact_1d(&[two_d], 0.01, 64, &KMeansOptions::new(1, 1)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn euclidean_mds_cases() {
        let zero = DistanceMatrix::new(DMatrix::zeros(4, 4)).unwrap();
        let res = kmeans_euclidean_mds(&zero, 2, &KMeansOptions::new(1, 1)).unwrap();
        assert_eq!(res.within_cost, 0.0);
        assert_eq!(res.labels, vec![0; 4]);
    }

    #[test]
    fn medoids_on_line() {
        let xs: [f64; 6] = [0.0, 0.1, 0.2, 10.0, 10.1, 10.3];
        let e = DMatrix::from_fn(6, 6, |i, j| (xs[i] - xs[j]).abs());
        let res = kmeans_energy_medoids(&e, &KMeansOptions::new(2, 4)).unwrap();
        assert_eq!(adjusted_rand_index(&res.labels, &[0, 0, 0, 1, 1, 1]), 1.0);
        let mut medoids: Vec<usize> = res.centroids.iter().map(|m| m.index).collect();
        medoids.sort_unstable();
        assert_eq!(medoids, vec![1, 4]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn lloyd_invariants(seed in 0u64..10_000, k in 1usize..5) {
            let (pts, _) = blobs(seed, &[(0.0, 0.0), (4.0, 1.0), (1.0, 5.0)], 8, 1.5);
            let res = kmeans(&pts, Mode::EuclideanMds, &KMeansOptions::new(k, seed)).unwrap();
            prop_assert!(res.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
            prop_assert_eq!(res.cluster_count(), k);
            for (i, p) in pts.iter().enumerate() {
                let own = p.dist_sq(&res.centroids[res.labels[i]]).unwrap();
                for c in &res.centroids {
                    prop_assert!(own <= p.dist_sq(c).unwrap() + 1e-9);
                }
            }
        }
    }
}
