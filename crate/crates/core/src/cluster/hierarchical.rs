use rayon::prelude::*;

use super::{canonical_labels, Centroid};
use crate::error::{Error, Result};

/// One agglomeration step. Leaves are nodes `0..n`; merge `t` creates node `n + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    /// Distance between the two merged clusters at merge time.
    pub height: f64,
    /// Total sample size of the merged cluster.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeTree {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl MergeTree {
    /// Labels after undoing all but the first `n - k` merges.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.n {
            return Err(Error::InvalidParam(format!("cannot cut {} leaves into {k} clusters", self.n)));
        }
        let mut parent: Vec<usize> = (0..self.n + self.merges.len()).collect();
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (t, m) in self.merges.iter().take(self.n - k).enumerate() {
            let node = self.n + t;
            let (a, b) = (root(&mut parent, m.left), root(&mut parent, m.right));
            parent[a] = node;
            parent[b] = node;
        }
        let raw: Vec<usize> = (0..self.n).map(|i| root(&mut parent, i)).collect();
        Ok(canonical_labels(&raw))
    }
}

/// Agglomerative clustering that repeatedly merges the two closest clusters
/// and represents the union by their barycenter, weighted by sample size.
pub fn hierarchical_single_linkage<C: Centroid>(items: &[C], sizes: &[usize]) -> Result<MergeTree> {
    let n = items.len();
    if n < 2 {
        return Err(Error::InsufficientData("merging needs at least two items".into()));
    }
    if sizes.len() != n {
        return Err(Error::Size(n, sizes.len()));
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidParam("sample sizes must be positive".into()));
    }
    let total_nodes = 2 * n - 1;
    let mut nodes: Vec<Option<(C, usize)>> = items.iter().cloned().zip(sizes.iter().copied()).map(Some).collect();
    nodes.resize_with(total_nodes, || None);
    let mut dist = vec![vec![f64::INFINITY; total_nodes]; total_nodes];
    for i in 0..n {
        let row: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|j| if j <= i { Ok(f64::INFINITY) } else { items[i].dist_sq(&items[j]) })
            .collect::<Result<_>>()?;
        dist[i][i + 1..n].copy_from_slice(&row[i + 1..n]);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for t in 0..n - 1 {
        let active: Vec<usize> = (0..n + t).filter(|&i| nodes[i].is_some()).collect();
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for (ai, &i) in active.iter().enumerate() {
            for &j in &active[ai + 1..] {
                if dist[i][j] < best.2 {
                    best = (i, j, dist[i][j]);
                }
            }
        }
        let (i, j, d2) = best;
        let (ci, si) = nodes[i].take().expect("active node");
        let (cj, sj) = nodes[j].take().expect("active node");
        let size = si + sj;
        let wi = si as f64 / size as f64;
        let merged = C::barycenter(&[&ci, &cj], &[wi, 1.0 - wi])?;
        let node = n + t;
        let fresh: Vec<(usize, f64)> = active
            .par_iter()
            .filter(|&&a| a != i && a != j)
            .map(|&a| {
                let (c, _) = nodes[a].as_ref().expect("active node");
                Ok((a, c.dist_sq(&merged)?))
            })
            .collect::<Result<_>>()?;
        for (a, v) in fresh {
            dist[a][node] = v;
        }
        nodes[node] = Some((merged, size));
        merges.push(Merge {
            left: i,
            right: j,
            height: d2.max(0.0).sqrt(),
            size,
        });
    }
    Ok(MergeTree { n, merges })
}
