//! Exact discrete optimal transport.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::canonical_order;

/// An `n x d` sample of observations with an identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    pub points: DMatrix<f64>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InsufficientData("dataset has no observations".into()));
        }
        for j in 0..points.ncols() {
            for i in 0..points.nrows() {
                if !points[(i, j)].is_finite() {
                    return Err(Error::Format(format!("non-finite value at row {i}, column {j}")));
                }
            }
        }
        Ok(Dataset {
            id: id.into(),
            points,
        })
    }

    /// A one-dimensional dataset.
    pub fn from_values(id: impl Into<String>, values: &[f64]) -> Result<Self> {
        Dataset::new(id, DMatrix::from_column_slice(values.len(), 1, values))
    }

    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Format("rows have unequal lengths".into()));
        }
        Dataset::new(id, DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// The single column of a one-dimensional dataset.
    pub fn values_1d(&self) -> Result<Vec<f64>> {
        if self.dim() != 1 {
            return Err(Error::Dimension {
                expected: 1,
                got: self.dim(),
            });
        }
        Ok(self.points.column(0).iter().copied().collect())
    }
}

/// An optimal assignment together with its mean cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `perm[i]` is the column assigned to row `i`.
    pub perm: Vec<usize>,
    /// Mean cost `(1/m) sum_i costs[i, perm[i]]`.
    pub cost: f64,
}

/// Solve the square linear assignment problem exactly in `O(m^3)`.
///
/// Shortest augmenting paths with row/column potentials (Kuhn-Munkres).
pub fn hungarian(costs: &DMatrix<f64>) -> Result<Assignment> {
    let m = costs.nrows();
    if costs.ncols() != m {
        return Err(Error::Dimension {
            expected: m,
            got: costs.ncols(),
        });
    }
    for j in 0..m {
        for i in 0..m {
            if !costs[(i, j)].is_finite() {
                return Err(Error::InvalidCost(i, j));
            }
        }
    }
    if m == 0 {
        return Ok(Assignment {
            perm: Vec::new(),
            cost: 0.0,
        });
    }

    // 1-based arrays; row 0 / column 0 are sentinels.
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=m {
        owner[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = costs[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0; m];
    for j in 1..=m {
        perm[owner[j] - 1] = j - 1;
    }
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| costs[(i, j)]).sum();
    Ok(Assignment {
        perm,
        cost: total / m as f64,
    })
}

/// Squared Euclidean distances between the rows of `a` and the rows of `b`.
pub fn squared_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| row_dist_sq(a, i, b, j))
}

pub(crate) fn row_dist_sq(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum()
}

/// Optimal assignment between the rows of two equal-size point sets.
pub fn assign_points(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Assignment> {
    if x.nrows() != y.nrows() {
        return Err(Error::Size(x.nrows(), y.nrows()));
    }
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension {
            expected: x.ncols(),
            got: y.ncols(),
        });
    }
    hungarian(&squared_distances(x, y))
}

/// `(1/n) min_pi sum_i |X_i - Y_pi(i)|^2` for two samples of equal size.
pub fn empirical_w2_sq(x: &Dataset, y: &Dataset) -> Result<f64> {
    let (a, b) = if canonical_order(&x.points, &y.points) { (x, y) } else { (y, x) };
    Ok(assign_points(&a.points, &b.points)?.cost)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// 1D squared Wasserstein distance between equal-size samples via order statistics.
pub fn quantile_w2_sq_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Size(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    let (xs, ys) = (sorted(x), sorted(y));
    let total: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(total / x.len() as f64)
}

/// The empirical quantile function of `values` on a trimmed midpoint grid.
///
/// Grid points are `s_i = delta + (i + 1/2)(1 - 2 delta)/grid` and the
/// quantile is the left-continuous inverse `x_(ceil(n s))`.
pub fn quantile_profile(values: &[f64], delta: f64, grid: usize) -> Result<Vec<f64>> {
    if !(0.0..0.5).contains(&delta) {
        return Err(Error::InvalidTrim(delta));
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    if grid == 0 {
        return Err(Error::InvalidParam("quantile grid must be positive".into()));
    }
    let xs = sorted(values);
    let n = xs.len();
    let width = 1.0 - 2.0 * delta;
    Ok((0..grid)
        .map(|i| {
            let s = delta + (i as f64 + 0.5) * width / grid as f64;
            let k = ((n as f64 * s).ceil() as usize).clamp(1, n);
            xs[k - 1]
        })
        .collect())
}

/// Mean squared difference of two quantile profiles on a shared grid.
pub fn profile_dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

/// Trimmed 1D squared Wasserstein distance evaluated on a quantile grid of size `grid`.
pub fn trimmed_w2_sq_1d(x: &[f64], y: &[f64], delta: f64, grid: usize) -> Result<f64> {
    let a = quantile_profile(x, delta, grid)?;
    let b = quantile_profile(y, delta, grid)?;
    Ok(profile_dist_sq(&a, &b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn permutations(m: usize) -> Vec<Vec<usize>> {
        if m == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(m - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, m - 1);
                out.push(q);
            }
        }
        out
    }

    fn brute_force(costs: &DMatrix<f64>) -> f64 {
        permutations(costs.nrows())
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| costs[(i, j)]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    fn random_points(rng: &mut impl Rng, n: usize, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn hungarian_small_cases() {
        let a = hungarian(&DMatrix::from_element(1, 1, 2.5)).unwrap();
        assert_eq!(a.perm, vec![0]);
        assert_eq!(a.cost, 2.5);
        let a = hungarian(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(a.perm, vec![0, 1]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn hungarian_rejects_bad_input() {
        assert!(matches!(
            hungarian(&DMatrix::zeros(2, 3)),
            Err(Error::Dimension { .. })
        ));
        let mut c = DMatrix::zeros(2, 2);
        c[(1, 0)] = f64::NAN;
        assert!(matches!(hungarian(&c), Err(Error::InvalidCost(1, 0))));
    }

    #[test]
    fn hungarian_matches_exhaustive_search() {
        let mut rng = crate::rng::stream(11);
        for trial in 0..300 {
            let m = 1 + trial % 7;
            let costs = if trial % 2 == 0 {
                DMatrix::from_fn(m, m, |_, _| rng.random_range(0..10) as f64)
            } else {
                DMatrix::from_fn(m, m, |_, _| rng.random_range(0.0..1.0))
            };
            let a = hungarian(&costs).unwrap();
            let mut seen = a.perm.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..m).collect::<Vec<_>>());
            let total = a.cost * m as f64;
            assert!((total - brute_force(&costs)).abs() < 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn w2_examples() {
        let x = Dataset::from_values("x", &[0.0, 0.0]).unwrap();
        let y = Dataset::from_values("y", &[-1.0, 1.0]).unwrap();
        assert_eq!(empirical_w2_sq(&x, &y).unwrap(), 1.0);
        assert_eq!(empirical_w2_sq(&y, &y).unwrap(), 0.0);
        assert!(matches!(
            empirical_w2_sq(&x, &Dataset::from_values("z", &[1.0]).unwrap()),
            Err(Error::Size(_, _))
        ));

        let mut rng = crate::rng::stream(3);
        let p = random_points(&mut rng, 4, 2);
        let q = random_points(&mut rng, 4, 2);
        let exact = brute_force(&squared_distances(&p, &q)) / 4.0;
        let got = empirical_w2_sq(
            &Dataset::new("p", p).unwrap(),
            &Dataset::new("q", q).unwrap(),
        )
        .unwrap();
        assert!((got - exact).abs() < 1e-12);
    }

    #[test]
    fn quantile_examples() {
        assert!((quantile_w2_sq_1d(&[0.25, 0.75], &[0.0, 0.5]).unwrap() - 0.0625).abs() < 1e-15);
        assert!((quantile_w2_sq_1d(&[0.75, 0.25], &[0.5, 0.0]).unwrap() - 0.0625).abs() < 1e-15);
        assert_eq!(quantile_w2_sq_1d(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(quantile_w2_sq_1d(&[1.0], &[1.0, 2.0]), Err(Error::Size(1, 2))));
    }

    #[test]
    fn quantile_matches_hungarian_in_1d() {
        let mut rng = crate::rng::stream(5);
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let q = quantile_w2_sq_1d(&x, &y).unwrap();
            let h = empirical_w2_sq(
                &Dataset::from_values("x", &x).unwrap(),
                &Dataset::from_values("y", &y).unwrap(),
            )
            .unwrap();
            assert!((q - h).abs() < 1e-10 * (1.0 + q));
        }
    }

    #[test]
    fn trimmed_examples() {
        let mut rng = crate::rng::stream(8);
        let x: Vec<f64> = (0..37).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..37).map(|_| rng.random_range(0.0..3.0)).collect();
        let exact = quantile_w2_sq_1d(&x, &y).unwrap();
        let approx = trimmed_w2_sq_1d(&x, &y, 0.0, 20_000).unwrap();
        assert!((approx - exact).abs() <= 1e-3 * exact);
        assert_eq!(trimmed_w2_sq_1d(&x, &x, 0.2, 512).unwrap(), 0.0);

        let zeros = vec![0.0; 10];
        let mut outliers = vec![0.0; 10];
        outliers[0] = -1e6;
        outliers[9] = 1e6;
        assert_eq!(trimmed_w2_sq_1d(&zeros, &outliers, 0.15, 512).unwrap(), 0.0);
        assert!(trimmed_w2_sq_1d(&zeros, &outliers, 0.0, 512).unwrap() > 0.0);
        assert!(matches!(trimmed_w2_sq_1d(&x, &y, 0.5, 512), Err(Error::InvalidTrim(_))));
        assert!(matches!(trimmed_w2_sq_1d(&x, &y, -0.1, 512), Err(Error::InvalidTrim(_))));
    }

    #[test]
    fn untrimmed_grid_is_exact_for_multiples() {
        let x = [3.0, -1.0, 0.5, 2.0];
        let y = [0.0, 1.0, 1.5, -2.0];
        let exact = quantile_w2_sq_1d(&x, &y).unwrap();
        assert!((trimmed_w2_sq_1d(&x, &y, 0.0, 512).unwrap() - exact).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn w2_is_metric(seed in 0u64..5000, n in 1usize..7, d in 1usize..4) {
            let mut rng = crate::rng::stream(seed);
            let ds: Vec<Dataset> = (0..3)
                .map(|k| Dataset::new(k.to_string(), random_points(&mut rng, n, d)).unwrap())
                .collect();
            let w = |a: &Dataset, b: &Dataset| empirical_w2_sq(a, b).unwrap();
            prop_assert_eq!(w(&ds[0], &ds[1]), w(&ds[1], &ds[0]));
            let (ab, bc, ac) = (w(&ds[0], &ds[1]).sqrt(), w(&ds[1], &ds[2]).sqrt(), w(&ds[0], &ds[2]).sqrt());
            prop_assert!(ac <= ab + bc + 1e-10);
        }

        #[test]
        fn w2_shift_equivariant(seed in 0u64..5000, n in 1usize..8, shift in -50.0f64..50.0) {
            let mut rng = crate::rng::stream(seed);
            let x = random_points(&mut rng, n, 2);
            let y = random_points(&mut rng, n, 2);
            let base = empirical_w2_sq(&Dataset::new("x", x.clone()).unwrap(), &Dataset::new("y", y.clone()).unwrap()).unwrap();
            let shifted = empirical_w2_sq(
                &Dataset::new("x", x.add_scalar(shift)).unwrap(),
                &Dataset::new("y", y.add_scalar(shift)).unwrap(),
            ).unwrap();
            prop_assert!((base - shifted).abs() <= 1e-9 * base.max(1e-12) + 1e-12);
        }

        #[test]
        fn quantile_order_invariant(mut x in prop::collection::vec(-10.0f64..10.0, 1..20), seed in 0u64..1000) {
            let y: Vec<f64> = x.iter().map(|v| v * 0.5 + seed as f64 * 1e-3).collect();
            let a = quantile_w2_sq_1d(&x, &y).unwrap();
            x.reverse();
            prop_assert_eq!(a, quantile_w2_sq_1d(&x, &y).unwrap());
        }
    }
}
