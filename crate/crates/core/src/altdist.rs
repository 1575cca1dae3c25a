//! Alternative distances: the marginal hybrid, the transformed Gaussian
//! approximation and the energy distance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{canonical_order, gaussian_barycenter, gaussian_wasserstein_sq, GaussianSummary};
use crate::reference::standardize;
use crate::transport::{profile_dist_sq, quantile_profile, quantile_w2_sq_1d, Dataset};

/// Per-coordinate quantile functions on a shared midpoint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalProfile {
    pub quantile_grid: Vec<f64>,
    /// Row `j` holds the quantiles of coordinate `j`.
    pub per_coord_quantiles: DMatrix<f64>,
}

impl MarginalProfile {
    pub fn from_points(points: &DMatrix<f64>, grid: usize) -> Result<Self> {
        let d = points.ncols();
        let mut q = DMatrix::zeros(d, grid);
        for j in 0..d {
            let col: Vec<f64> = points.column(j).iter().copied().collect();
            let prof = quantile_profile(&col, 0.0, grid)?;
            for (g, v) in prof.into_iter().enumerate() {
                q[(j, g)] = v;
            }
        }
        Ok(MarginalProfile {
            quantile_grid: (0..grid).map(|i| (i as f64 + 0.5) / grid as f64).collect(),
            per_coord_quantiles: q,
        })
    }

    /// Sum over coordinates of the grid-averaged squared quantile differences.
    pub fn dist_sq(&self, other: &MarginalProfile) -> f64 {
        (0..self.per_coord_quantiles.nrows())
            .map(|j| {
                let a: Vec<f64> = self.per_coord_quantiles.row(j).iter().copied().collect();
                let b: Vec<f64> = other.per_coord_quantiles.row(j).iter().copied().collect();
                profile_dist_sq(&a, &b)
            })
            .sum()
    }
}

/// Settings for the marginal hybrid distance.
#[derive(Debug, Clone, Copy)]
pub struct MarginalOptions {
    /// Quantile grid size used when sample sizes differ.
    pub grid: usize,
    /// Compare the raw coordinates instead of the standardized ones.
    pub raw_coordinates: bool,
}

impl Default for MarginalOptions {
    fn default() -> Self {
        MarginalOptions {
            grid: 512,
            raw_coordinates: false,
        }
    }
}

fn marginal_points(x: &Dataset, opts: MarginalOptions) -> Result<DMatrix<f64>> {
    if opts.raw_coordinates {
        Ok(x.points.clone())
    } else {
        Ok(standardize(x)?.points)
    }
}

fn check_dim(x: &Dataset, y: &Dataset) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

/// Gaussian term on raw moments plus per-coordinate 1D Wasserstein terms.
///
/// Equal sample sizes pair order statistics exactly; otherwise both quantile
/// functions are evaluated on a grid of `opts.grid` points.
pub fn marginal_hybrid_sq(x: &Dataset, y: &Dataset, opts: MarginalOptions) -> Result<f64> {
    check_dim(x, y)?;
    let gauss = gaussian_wasserstein_sq(
        &GaussianSummary::from_points(&x.points),
        &GaussianSummary::from_points(&y.points),
    )?;
    let (px, py) = (marginal_points(x, opts)?, marginal_points(y, opts)?);
    let mut marginal = 0.0;
    for j in 0..x.dim() {
        let a: Vec<f64> = px.column(j).iter().copied().collect();
        let b: Vec<f64> = py.column(j).iter().copied().collect();
        marginal += if a.len() == b.len() {
            quantile_w2_sq_1d(&a, &b)?
        } else {
            profile_dist_sq(&quantile_profile(&a, 0.0, opts.grid)?, &quantile_profile(&b, 0.0, opts.grid)?)
        };
    }
    Ok(gauss + marginal)
}

/// Raw moments plus marginal quantile profiles; the centroid type of the
/// marginal k-means mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSummary {
    pub gaussian: GaussianSummary,
    pub profile: MarginalProfile,
}

impl MarginalSummary {
    pub fn new(x: &Dataset, opts: MarginalOptions) -> Result<Self> {
        Ok(MarginalSummary {
            gaussian: GaussianSummary::from_points(&x.points),
            profile: MarginalProfile::from_points(&marginal_points(x, opts)?, opts.grid)?,
        })
    }

    pub fn dist_sq(&self, other: &MarginalSummary) -> Result<f64> {
        Ok(gaussian_wasserstein_sq(&self.gaussian, &other.gaussian)? + self.profile.dist_sq(&other.profile))
    }

    /// Gaussian barycenter plus averaged quantile functions.
    pub fn barycenter(items: &[&MarginalSummary], weights: &[f64]) -> Result<Self> {
        let gs: Vec<&GaussianSummary> = items.iter().map(|s| &s.gaussian).collect();
        let gaussian = gaussian_barycenter(&gs, weights)?;
        let first = &items[0].profile;
        let mut q = DMatrix::zeros(first.per_coord_quantiles.nrows(), first.per_coord_quantiles.ncols());
        for (s, w) in items.iter().zip(weights) {
            q += &s.profile.per_coord_quantiles * *w;
        }
        Ok(MarginalSummary {
            gaussian,
            profile: MarginalProfile {
                quantile_grid: first.quantile_grid.clone(),
                per_coord_quantiles: q,
            },
        })
    }
}

/// Exponent vectors of all monomials of total degree `2..=degree` in `d`
/// variables, graded then lexicographic (`x1^2, x1 x2, x2^2, x1^3, ...`).
pub fn monomial_exponents(d: usize, degree: usize) -> Vec<Vec<u32>> {
    fn fill(d: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == d - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            fill(d, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if d == 0 {
        return out;
    }
    for t in 2..=degree as u32 {
        fill(d, t, &mut Vec::new(), &mut out);
    }
    out
}

/// Moments of the polynomial features of standardized data.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMoments {
    pub degree: usize,
    pub moments: GaussianSummary,
}

fn features(points: &DMatrix<f64>, exps: &[Vec<u32>]) -> DMatrix<f64> {
    DMatrix::from_fn(points.nrows(), exps.len(), |i, f| {
        exps[f]
            .iter()
            .enumerate()
            .map(|(k, &e)| points[(i, k)].powi(e as i32))
            .product()
    })
}

impl PolyMoments {
    pub fn new(x: &Dataset, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidParam("feature degree must be at least 1".into()));
        }
        let xt = standardize(x)?;
        let exps = monomial_exponents(x.dim(), degree);
        Ok(PolyMoments {
            degree,
            moments: GaussianSummary::from_points(&features(&xt.points, &exps)),
        })
    }
}

/// Raw Gaussian summary plus feature moments; the centroid type of the
/// transformed k-means mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedSummary {
    pub raw: GaussianSummary,
    pub features: PolyMoments,
}

impl TransformedSummary {
    pub fn new(x: &Dataset, degree: usize) -> Result<Self> {
        Ok(TransformedSummary {
            raw: GaussianSummary::from_points(&x.points),
            features: PolyMoments::new(x, degree)?,
        })
    }

    pub fn dist_sq(&self, other: &TransformedSummary) -> Result<f64> {
        let raw = gaussian_wasserstein_sq(&self.raw, &other.raw)?;
        if self.features.moments.dim() == 0 {
            return Ok(raw);
        }
        Ok(raw + gaussian_wasserstein_sq(&self.features.moments, &other.features.moments)?)
    }

    pub fn barycenter(items: &[&TransformedSummary], weights: &[f64]) -> Result<Self> {
        let raws: Vec<&GaussianSummary> = items.iter().map(|s| &s.raw).collect();
        let feats: Vec<&GaussianSummary> = items.iter().map(|s| &s.features.moments).collect();
        let moments = if feats[0].dim() == 0 {
            feats[0].clone()
        } else {
            gaussian_barycenter(&feats, weights)?
        };
        Ok(TransformedSummary {
            raw: gaussian_barycenter(&raws, weights)?,
            features: PolyMoments {
                degree: items[0].features.degree,
                moments,
            },
        })
    }
}

/// `G^2(X, Y) + G^2(Phi(X~), Phi(Y~))` with monomial features of degree `2..=degree`.
///
/// With `degree == 1` the feature map is empty and the result is the plain
/// Gaussian Wasserstein distance.
pub fn transformed_gaussian_sq(x: &Dataset, y: &Dataset, degree: usize) -> Result<f64> {
    check_dim(x, y)?;
    TransformedSummary::new(x, degree)?.dist_sq(&TransformedSummary::new(y, degree)?)
}

fn mean_pair_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            total += crate::transport::row_dist_sq(a, i, b, j).sqrt();
        }
    }
    total / (a.nrows() * b.nrows()) as f64
}

/// Energy distance `2 E|X - Y| - E|X - X'| - E|Y - Y'|` with every expectation
/// a plain average over all pairs (V-statistic), so it vanishes on identical
/// samples and is never negative.
pub fn energy_distance(x: &Dataset, y: &Dataset) -> Result<f64> {
    check_dim(x, y)?;
    energy_points(&x.points, &y.points)
}

pub(crate) fn energy_points(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() < 2 || y.nrows() < 2 {
        return Err(Error::InsufficientData("energy distance needs two points per sample".into()));
    }
    let (x, y) = if canonical_order(x, y) { (x, y) } else { (y, x) };
    let value = 2.0 * mean_pair_distance(x, y) - mean_pair_distance(x, x) - mean_pair_distance(y, y);
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal(seed: u64, n: usize, d: usize) -> Dataset {
        let mut g = rng::stream(seed);
        Dataset::new("n", DMatrix::from_fn(n, d, |_, _| g.sample(StandardNormal))).unwrap()
    }

    fn circle(seed: u64, n: usize) -> Dataset {
        let mut g = rng::stream(seed);
        let r = 2f64.sqrt();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let t: f64 = g.random_range(0.0..std::f64::consts::TAU);
                vec![r * t.cos(), r * t.sin()]
            })
            .collect();
        Dataset::from_rows("c", &rows).unwrap()
    }

    fn two_point(seed: u64, n: usize) -> Dataset {
        let mut g = rng::stream(seed);
        let v: Vec<f64> = (0..n).map(|_| if g.random::<bool>() { 1.0 } else { -1.0 }).collect();
        Dataset::from_values("t", &v).unwrap()
    }

    #[test]
    fn marginal_identity_and_symmetry() {
        let x = normal(1, 80, 2);
        let y = circle(2, 60);
        let o = MarginalOptions::default();
        assert_eq!(marginal_hybrid_sq(&x, &x, o).unwrap(), 0.0);
        assert_eq!(marginal_hybrid_sq(&x, &y, o).unwrap(), marginal_hybrid_sq(&y, &x, o).unwrap());
    }

    #[test]
    fn marginal_separates_normal_from_circle() {
        let x = normal(3, 1000, 2);
        let y = circle(4, 1000);
        let gauss = gaussian_wasserstein_sq(
            &GaussianSummary::from_points(&x.points),
            &GaussianSummary::from_points(&y.points),
        )
        .unwrap();
        let total = marginal_hybrid_sq(&x, &y, MarginalOptions::default()).unwrap();
        assert!(gauss < 0.05);
        assert!(total - gauss > 0.05);
    }

    #[test]
    fn marginal_order_statistics_in_1d() {
        let x = normal(5, 50, 1);
        let y = two_point(6, 50);
        let gauss = gaussian_wasserstein_sq(
            &GaussianSummary::from_points(&x.points),
            &GaussianSummary::from_points(&y.points),
        )
        .unwrap();
        let sx = standardize(&x).unwrap().points;
        let sy = standardize(&y).unwrap().points;
        let mut a: Vec<f64> = sx.iter().copied().collect();
        let mut b: Vec<f64> = sy.iter().copied().collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let direct: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / 50.0;
        let got = marginal_hybrid_sq(&x, &y, MarginalOptions::default()).unwrap();
        assert!((got - gauss - direct).abs() < 1e-12);
    }

    #[test]
    fn summary_matches_direct_distance_on_grid_multiples() {
        let x = normal(7, 64, 2);
        let y = circle(8, 64);
        let o = MarginalOptions { grid: 128, raw_coordinates: false };
        let direct = marginal_hybrid_sq(&x, &y, o).unwrap();
        let via = MarginalSummary::new(&x, o).unwrap().dist_sq(&MarginalSummary::new(&y, o).unwrap()).unwrap();
        assert!((direct - via).abs() < 1e-10);
    }

    #[test]
    fn monomial_order() {
        assert_eq!(
            monomial_exponents(2, 3),
            vec![vec![2, 0], vec![1, 1], vec![0, 2], vec![3, 0], vec![2, 1], vec![1, 2], vec![0, 3]]
        );
        assert_eq!(monomial_exponents(1, 4), vec![vec![2], vec![3], vec![4]]);
        assert!(monomial_exponents(3, 1).is_empty());
        // C(d + k, k) - d - 1 monomials of degree 2..k
        assert_eq!(monomial_exponents(3, 4).len(), 35 - 3 - 1);
    }

    #[test]
    fn transformed_cases() {
        let x = normal(9, 500, 1);
        let y = two_point(10, 500);
        assert_eq!(transformed_gaussian_sq(&x, &x, 4).unwrap(), 0.0);
        let g = gaussian_wasserstein_sq(
            &GaussianSummary::from_points(&x.points),
            &GaussianSummary::from_points(&y.points),
        )
        .unwrap();
        let t = transformed_gaussian_sq(&x, &y, 4).unwrap();
        assert!(t - g > 0.5, "{t} {g}");
        assert_eq!(transformed_gaussian_sq(&x, &y, 1).unwrap(), g);
        assert!(transformed_gaussian_sq(&x, &y, 0).is_err());

        let z = normal(11, 500, 1);
        let gz = gaussian_wasserstein_sq(
            &GaussianSummary::from_points(&x.points),
            &GaussianSummary::from_points(&z.points),
        )
        .unwrap();
        assert!(transformed_gaussian_sq(&x, &z, 3).unwrap() >= gz);
        assert_eq!(transformed_gaussian_sq(&x, &z, 3).unwrap(), transformed_gaussian_sq(&z, &x, 3).unwrap());
    }

    #[test]
    fn energy_examples() {
        let x = normal(12, 40, 2);
        assert_eq!(energy_distance(&x, &x).unwrap(), 0.0);
        let zeros = Dataset::from_values("z", &[0.0; 5]).unwrap();
        let ones = Dataset::from_values("o", &[1.0; 7]).unwrap();
        assert!((energy_distance(&zeros, &ones).unwrap() - 2.0).abs() < 1e-15);
        let y = normal(13, 30, 2);
        assert_eq!(energy_distance(&x, &y).unwrap(), energy_distance(&y, &x).unwrap());
        assert!(matches!(
            energy_distance(&Dataset::from_values("a", &[1.0]).unwrap(), &ones),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn energy_translation_invariant_and_nonnegative() {
        for s in 0..20 {
            let x = normal(100 + s, 25, 2);
            let y = normal(200 + s, 31, 2);
            let e = energy_distance(&x, &y).unwrap();
            assert!(e >= 0.0);
            let shift = |d: &Dataset| Dataset::new("s", d.points.add_scalar(12.5)).unwrap();
            assert!((energy_distance(&shift(&x), &shift(&y)).unwrap() - e).abs() < 1e-9);
        }
    }

    #[test]
    fn energy_barycenter_is_over_dispersed() {
        let a = 1.5;
        let p1 = Dataset::from_values("p1", &[-a; 10]).unwrap();
        let p2 = Dataset::from_values("p2", &[a; 10]).unwrap();
        let objective = |b: f64| {
            let mut v = vec![-b; 5];
            v.extend(vec![b; 5]);
            let c = Dataset::from_values("c", &v).unwrap();
            energy_distance(&c, &p1).unwrap() + energy_distance(&c, &p2).unwrap()
        };
        let grid: Vec<f64> = (0..=300).map(|i| i as f64 * 0.01).collect();
        let best = grid
            .iter()
            .copied()
            .min_by(|x, y| objective(*x).total_cmp(&objective(*y)))
            .unwrap();
        assert!((best - a).abs() < 1e-9);
        assert!(objective(0.0) > objective(a));
    }
}
