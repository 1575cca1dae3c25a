use super::kmeans::{best_run, kmeans, kmeans_from, KMeansOptions};
use super::{Centroid, ClusterResult, Mode};
use crate::error::{Error, Result};

/// One row of an elbow curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElbowPoint {
    pub k: usize,
    pub within_cost: f64,
    /// `1 / S_k`; infinite when the cost is zero.
    pub inverse: f64,
}

/// Within-cluster cost `S_k` for `k = 1..=kmax`.
///
/// Each `k` takes the best of the random restarts and of one warm start that
/// keeps the previous centroids and adds the item farthest from its centroid,
/// so `S_k` never exceeds `S_{k-1}` beyond barycenter round-off.
pub fn elbow_curve<C: Centroid>(items: &[C], mode: Mode, kmax: usize, opts: &KMeansOptions) -> Result<Vec<ElbowPoint>> {
    if kmax == 0 || kmax > items.len() {
        return Err(Error::InvalidParam(format!("kmax {kmax} outside 1..={}", items.len())));
    }
    let mut out = Vec::with_capacity(kmax);
    let mut previous: Option<ClusterResult<C>> = None;
    for k in 1..=kmax {
        let o = KMeansOptions { k, ..*opts };
        let mut runs = vec![kmeans(items, mode, &o)?];
        if let Some(prev) = &previous {
            let mut far = (0, f64::NEG_INFINITY);
            for (i, item) in items.iter().enumerate() {
                let d = item.dist_sq(&prev.centroids[prev.labels[i]])?;
                if d > far.1 {
                    far = (i, d);
                }
            }
            let mut start = prev.centroids.clone();
            start.push(items[far.0].clone());
            runs.push(kmeans_from(items, mode, start, &o)?);
        }
        let best = best_run(runs);
        out.push(ElbowPoint {
            k,
            within_cost: best.within_cost,
            inverse: 1.0 / best.within_cost,
        });
        previous = Some(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Point;
    use crate::rng;
    use nalgebra::DVector;
    use rand::Rng;

    #[test]
    fn elbow_is_nonincreasing_and_ends_at_zero() {
        let mut g = rng::stream(1);
        let pts: Vec<Point> = (0..12)
            .map(|i| {
                let c = (i % 4) as f64 * 5.0;
                Point(DVector::from_vec(vec![c + g.random_range(-1.0..1.0), g.random_range(-1.0..1.0)]))
            })
            .collect();
        let curve = elbow_curve(&pts, Mode::EuclideanMds, 12, &KMeansOptions::new(1, 3)).unwrap();
        assert_eq!(curve.len(), 12);
        assert!(curve.windows(2).all(|w| w[1].within_cost <= w[0].within_cost * (1.0 + 1e-12)));
        assert_eq!(curve[11].within_cost, 0.0);
        assert!(curve[11].inverse.is_infinite());
        let drops: Vec<f64> = curve[..6]
            .windows(2).map(|w| (w[0].within_cost - w[1].within_cost) / w[0].within_cost).collect();
        let best = drops.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 2;
        assert_eq!(best, 4);
    }
}
