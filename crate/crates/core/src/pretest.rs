//! Two-sample tests that decide whether a dataset's shape term is worth
//! estimating. When a standardized dataset is indistinguishable from the
//! reference, its transport map is taken to be the identity.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{estimate_transport, from_estimate, subsample, HybridTransform, TransformOptions};
use crate::linalg::GaussianSummary;
use crate::matching::min_weight_perfect_matching;
use crate::reference::{build_reference, standardize, ReferenceMeasure, StandardizedDataset};
use crate::rng;
use crate::transport::{row_dist_sq, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretestMethod {
    EnergyPermutation,
    Crossmatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretestOptions {
    pub method: PretestMethod,
    /// Level of the test, in `(0, 1]`. At 1 every test rejects.
    pub alpha: f64,
    /// Permutation resamples for the energy test.
    pub permutations: usize,
}

impl Default for PretestOptions {
    fn default() -> Self {
        PretestOptions {
            method: PretestMethod::EnergyPermutation,
            alpha: 0.10,
            permutations: 499,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub method: PretestMethod,
}

/// Test whether two samples come from the same distribution.
pub fn pretest(a: &Dataset, b: &Dataset, opts: &PretestOptions, seed: u64) -> Result<PretestOutcome> {
    pretest_points(&a.points, &b.points, opts, seed)
}

pub(crate) fn pretest_points(a: &DMatrix<f64>, b: &DMatrix<f64>, opts: &PretestOptions, seed: u64) -> Result<PretestOutcome> {
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(Error::InvalidParam(format!("alpha {} outside (0, 1]", opts.alpha)));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InsufficientData("two-sample test needs nonempty samples".into()));
    }
    let (statistic, p_value) = match opts.method {
        PretestMethod::EnergyPermutation => energy_permutation(a, b, opts.permutations, seed)?,
        PretestMethod::Crossmatch => crossmatch(a, b, seed)?,
    };
    Ok(PretestOutcome {
        statistic,
        p_value,
        reject: p_value <= opts.alpha,
        method: opts.method,
    })
}

fn pool(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    DMatrix::from_fn(na + nb, a.ncols(), |i, k| if i < na { a[(i, k)] } else { b[(i - na, k)] })
}

fn pooled_distances(z: &DMatrix<f64>) -> DMatrix<f64> {
    let n = z.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v = row_dist_sq(z, i, z, j).sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// V-statistic energy distance between the items flagged `true` and the rest.
fn split_energy(d: &DMatrix<f64>, in_a: &[bool]) -> f64 {
    let n = in_a.len();
    let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            match (in_a[i], in_a[j]) {
                (true, true) => aa += d[(i, j)],
                (false, false) => bb += d[(i, j)],
                _ => ab += d[(i, j)],
            }
        }
    }
    let na = in_a.iter().filter(|&&f| f).count() as f64;
    let nb = n as f64 - na;
    // `ab` counts every cross pair twice
    (ab / (na * nb) - aa / (na * na) - bb / (nb * nb)).max(0.0)
}

fn energy_permutation(a: &DMatrix<f64>, b: &DMatrix<f64>, permutations: usize, seed: u64) -> Result<(f64, f64)> {
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::InsufficientData("energy test needs two points per sample".into()));
    }
    let na = a.nrows();
    let d = pooled_distances(&pool(a, b));
    let labels: Vec<bool> = (0..d.nrows()).map(|i| i < na).collect();
    let observed = split_energy(&d, &labels);
    let exceed = (0..permutations)
        .into_par_iter()
        .filter(|&p| {
            let mut g = rng::stream(rng::indexed_seed(seed, rng::PERMUTATION, p as u64));
            let mut shuffled = labels.clone();
            shuffled.shuffle(&mut g);
            split_energy(&d, &shuffled) >= observed
        })
        .count();
    Ok((observed, (1 + exceed) as f64 / (permutations + 1) as f64))
}

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// `P(A1 <= observed)` under the exact permutation null for `n_a` items of
/// one kind among `2 * pairs` items, where `A1` counts mixed pairs.
pub fn crossmatch_p_value(observed: usize, n_a: usize, pairs: usize) -> Result<f64> {
    let total = 2 * pairs;
    if n_a > total {
        return Err(Error::InvalidParam(format!("{n_a} items of one kind among {total}")));
    }
    let ln_choose = ln_factorial(total) - ln_factorial(n_a) - ln_factorial(total - n_a);
    let mut p = 0.0;
    let mut a1 = n_a % 2;
    while a1 <= observed.min(n_a).min(total - n_a) {
        let a2 = (n_a - a1) / 2;
        if a1 + a2 <= pairs {
            let a0 = pairs - a1 - a2;
            let ln_p = a1 as f64 * std::f64::consts::LN_2 + ln_factorial(pairs)
                - ln_choose
                - ln_factorial(a0)
                - ln_factorial(a1)
                - ln_factorial(a2);
            p += ln_p.exp();
        }
        a1 += 2;
    }
    Ok(p.min(1.0))
}

fn crossmatch(a: &DMatrix<f64>, b: &DMatrix<f64>, seed: u64) -> Result<(f64, f64)> {
    let mut z = pool(a, b);
    let mut in_a: Vec<bool> = (0..z.nrows()).map(|i| i < a.nrows()).collect();
    if z.nrows() % 2 == 1 {
        let drop = rng::stream(rng::child_seed(seed, rng::DROP_POINT)).random_range(0..z.nrows());
        z = z.remove_row(drop);
        in_a.remove(drop);
    }
    if z.nrows() < 2 {
        return Err(Error::InsufficientData("cross-match needs at least two points".into()));
    }
    let mate = min_weight_perfect_matching(&pooled_distances(&z))?;
    let cross = (0..z.nrows()).filter(|&i| i < mate[i] && in_a[i] != in_a[mate[i]]).count();
    let n_a = in_a.iter().filter(|&&f| f).count();
    let p = crossmatch_p_value(cross, n_a, z.nrows() / 2)?;
    Ok((cross as f64, p))
}

/// Hybrid transform of one dataset, skipping the transport estimate when the
/// standardized subsample passes a test against a fresh draw from the reference.
pub fn transform_with_pretest(
    x: &Dataset,
    reference: &ReferenceMeasure,
    m: usize,
    opts: &PretestOptions,
    seed: u64,
) -> Result<(HybridTransform, PretestOutcome)> {
    let xt = standardize(x)?;
    pretested(x, &xt, reference, m, opts, seed)
}

fn pretested(
    x: &Dataset,
    xt: &StandardizedDataset,
    reference: &ReferenceMeasure,
    m: usize,
    opts: &PretestOptions,
    seed: u64,
) -> Result<(HybridTransform, PretestOutcome)> {
    if m > xt.n() {
        return Err(Error::Subsample {
            requested: m,
            available: xt.n(),
        });
    }
    if xt.dim() != reference.dim() {
        return Err(Error::Dimension {
            expected: reference.dim(),
            got: xt.dim(),
        });
    }
    let sub = subsample(&xt.points, m, seed);
    let fresh = reference.sample(m, &mut rng::stream(rng::child_seed(seed, rng::PRETEST_REFERENCE)));
    let outcome = pretest_points(&sub, &fresh, opts, rng::child_seed(seed, rng::PRETEST_TEST))?;
    let summary = GaussianSummary::from_points(&x.points);
    let transform = if outcome.reject {
        let est = estimate_transport(xt, reference, m, seed)?;
        from_estimate(summary, &est, reference)
    } else {
        HybridTransform::identity(summary, reference)
    };
    Ok((transform, outcome))
}

/// As [`crate::hybrid::build_transforms`], with a pre-test per dataset.
/// Subsample seeds match the untested build, so datasets whose test rejects
/// get the same transform either way.
pub fn build_transforms_pretested(
    datasets: &[Dataset],
    opts: TransformOptions,
    pretest: &PretestOptions,
) -> Result<(ReferenceMeasure, Vec<HybridTransform>, Vec<PretestOutcome>)> {
    let standardized: Vec<StandardizedDataset> = datasets.iter().map(standardize).collect::<Result<_>>()?;
    let reference = build_reference(&standardized, opts.m, opts.seed)?;
    let (transforms, outcomes) = datasets
        .par_iter()
        .zip(standardized.par_iter())
        .enumerate()
        .map(|(j, (x, xt))| {
            let seed = rng::indexed_seed(opts.seed, rng::SUBSAMPLE, j as u64);
            pretested(x, xt, &reference, opts.m, pretest, seed)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((reference, transforms, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{build_transforms, hybrid_distance_sq};
    use rand_distr::StandardNormal;

    fn normal(g: &mut rng::StreamRng, n: usize, d: usize, shift: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| g.sample::<f64, _>(StandardNormal) + shift)
    }

    fn energy(permutations: usize) -> PretestOptions {
        PretestOptions {
            permutations,
            ..Default::default()
        }
    }

    fn crossmatch_opts() -> PretestOptions {
        PretestOptions {
            method: PretestMethod::Crossmatch,
            ..Default::default()
        }
    }

    #[test]
    fn identical_samples_do_not_reject() {
        let mut g = rng::stream(1);
        let a = normal(&mut g, 20, 2, 0.0);
        let out = pretest_points(&a, &a, &energy(99), 3).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert_eq!(out.p_value, 1.0);
        assert!(!out.reject);
    }

    #[test]
    fn statistic_matches_energy_distance() {
        let mut g = rng::stream(2);
        let a = normal(&mut g, 15, 2, 0.0);
        let b = normal(&mut g, 11, 2, 0.7);
        let out = pretest_points(&a, &b, &energy(19), 3).unwrap();
        let direct = crate::altdist::energy_points(&a, &b).unwrap();
        assert!((out.statistic - direct).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_alpha_and_dims() {
        let mut g = rng::stream(3);
        let a = normal(&mut g, 10, 2, 0.0);
        let b = normal(&mut g, 10, 1, 0.0);
        for alpha in [0.0, -0.1, 1.5, f64::NAN] {
            let o = PretestOptions { alpha, ..Default::default() };
            assert!(matches!(pretest_points(&a, &a, &o, 1), Err(Error::InvalidParam(_))));
        }
        assert!(matches!(pretest_points(&a, &b, &energy(9), 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn alpha_one_always_rejects() {
        let mut g = rng::stream(4);
        let a = normal(&mut g, 10, 1, 0.0);
        let o = PretestOptions { alpha: 1.0, permutations: 9, ..Default::default() };
        assert!(pretest_points(&a, &a, &o, 1).unwrap().reject);
    }

    #[test]
    fn crossmatch_null_sums_to_one() {
        for (n_a, pairs) in [(4, 4), (5, 5), (10, 7), (0, 3), (6, 3), (50, 50)] {
            assert!((crossmatch_p_value(usize::MAX, n_a, pairs).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn crossmatch_null_small_case() {
        // 4 items, 2 of each kind: 3 pairings, one with no mixed pairs
        assert!((crossmatch_p_value(0, 2, 2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((crossmatch_p_value(2, 2, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crossmatch_null_matches_enumeration() {
        // all perfect matchings of 8 items, 3 of kind A
        fn matchings(items: Vec<usize>) -> Vec<Vec<(usize, usize)>> {
            if items.is_empty() {
                return vec![vec![]];
            }
            let first = items[0];
            let mut out = Vec::new();
            for k in 1..items.len() {
                let rest: Vec<usize> = items.iter().enumerate().filter(|&(i, _)| i != 0 && i != k).map(|(_, &v)| v).collect();
                for mut m in matchings(rest) {
                    m.push((first, items[k]));
                    out.push(m);
                }
            }
            out
        }
        let all = matchings((0..8).collect());
        let in_a = |i: usize| i < 3;
        for obs in 0..=3 {
            let hits = all
                .iter()
                .filter(|m| m.iter().filter(|&&(i, j)| in_a(i) != in_a(j)).count() <= obs)
                .count();
            let exact = hits as f64 / all.len() as f64;
            assert!((crossmatch_p_value(obs, 3, 4).unwrap() - exact).abs() < 1e-12, "obs {obs}");
        }
    }

    #[test]
    fn odd_pool_drops_a_point() {
        let mut g = rng::stream(5);
        let a = normal(&mut g, 7, 2, 0.0);
        let b = normal(&mut g, 6, 2, 0.0);
        let out = pretest_points(&a, &b, &crossmatch_opts(), 9).unwrap();
        assert!(out.statistic <= 6.0);
        assert_eq!(out, pretest_points(&a, &b, &crossmatch_opts(), 9).unwrap());
    }

    #[test]
    fn level_control() {
        let mut g = rng::stream(6);
        let rejections = (0..300)
            .filter(|&t| {
                let a = normal(&mut g, 25, 1, 0.0);
                let b = normal(&mut g, 25, 1, 0.0);
                pretest_points(&a, &b, &energy(199), t).unwrap().reject
            })
            .count();
        assert!(rejections as f64 / 300.0 <= 0.13, "{rejections}");

        let rejections = (0..300)
            .filter(|&t| {
                let a = normal(&mut g, 20, 2, 0.0);
                let b = normal(&mut g, 20, 2, 0.0);
                pretest_points(&a, &b, &crossmatch_opts(), t).unwrap().reject
            })
            .count();
        assert!(rejections as f64 / 300.0 <= 0.13, "{rejections}");
    }

    #[test]
    fn power_against_a_shift() {
        let mut g = rng::stream(7);
        for opts in [energy(199), crossmatch_opts()] {
            let hits = (0..20)
                .filter(|&t| {
                    let a = normal(&mut g, 100, 1, 0.0);
                    let b = normal(&mut g, 100, 1, 3.0);
                    pretest_points(&a, &b, &opts, t).unwrap().reject
                })
                .count();
            assert!(hits >= 19, "{:?}: {hits}", opts.method);
        }
    }

    #[test]
    fn energy_p_values_are_uniform_under_the_null() {
        let mut g = rng::stream(8);
        let mut ps: Vec<f64> = (0..500)
            .map(|t| {
                let a = normal(&mut g, 10, 1, 0.0);
                let b = normal(&mut g, 10, 1, 0.0);
                pretest_points(&a, &b, &energy(99), t).unwrap().p_value
            })
            .collect();
        ps.sort_by(f64::total_cmp);
        let n = ps.len() as f64;
        let ks = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| ((i + 1) as f64 / n - p).abs().max((p - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks <= 0.08, "{ks}");
    }

    fn circle(g: &mut rng::StreamRng, n: usize) -> DMatrix<f64> {
        let angles: Vec<f64> = (0..n).map(|_| g.random_range(0.0..std::f64::consts::TAU)).collect();
        DMatrix::from_fn(n, 2, |i, k| if k == 0 { angles[i].cos() } else { angles[i].sin() })
    }

    #[test]
    fn skipped_transforms_have_zero_shape_distance() {
        let mut g = rng::stream(9);
        let data: Vec<Dataset> = (0..8)
            .map(|j| Dataset::new(j.to_string(), normal(&mut g, 120, 2, j as f64)).unwrap())
            .collect();
        let opts = TransformOptions { m: 60, seed: 3 };
        let (_, ts, outs) = build_transforms_pretested(&data, opts, &energy(199)).unwrap();
        let skipped: Vec<usize> = (0..8).filter(|&j| !outs[j].reject).collect();
        assert!(skipped.len() >= 5, "{outs:?}");
        for &i in &skipped {
            for &j in &skipped {
                assert_eq!(hybrid_distance_sq(&ts[i], &ts[j]).unwrap().shape_sq, 0.0);
            }
        }
        // rejected datasets match the plain build
        let (_, plain) = build_transforms(&data, opts).unwrap();
        for j in (0..8).filter(|&j| outs[j].reject) {
            assert_eq!(ts[j], plain[j]);
        }
    }

    #[test]
    fn circles_against_gaussian_reference_are_rarely_skipped() {
        let mut g = rng::stream(10);
        let mut data: Vec<Dataset> = (0..12)
            .map(|j| Dataset::new(j.to_string(), normal(&mut g, 150, 2, 0.0)).unwrap())
            .collect();
        let circles: Vec<Dataset> = (0..6)
            .map(|j| Dataset::new(format!("c{j}"), circle(&mut g, 150)).unwrap())
            .collect();
        data.extend(circles);
        let opts = TransformOptions { m: 100, seed: 4 };
        let (_, _, outs) = build_transforms_pretested(&data, opts, &crossmatch_opts()).unwrap();
        assert!(outs[12..].iter().all(|o| o.reject), "{:?}", &outs[12..]);
    }
}
