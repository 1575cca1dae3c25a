use super::{canonical_labels, Centroid, DistanceMatrix};
use crate::error::{Error, Result};

/// Modes found by a shift procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftResult {
    pub labels: Vec<usize>,
    /// Representative item of each cluster, indexed by label.
    pub modes: Vec<usize>,
    /// Longest path followed by any item.
    pub iterations: usize,
}

impl ShiftResult {
    pub fn cluster_count(&self) -> usize {
        self.modes.len()
    }
}

/// The `r` nearest other items of `j`; ties go to the lower index.
fn neighbours(d: &DistanceMatrix, j: usize, r: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..d.n()).filter(|&i| i != j).collect();
    others.sort_by(|&a, &b| d.get(j, a).total_cmp(&d.get(j, b)).then(a.cmp(&b)));
    others.truncate(r);
    others
}

fn check_r(n: usize, r: usize) -> Result<()> {
    if r == 0 || r >= n {
        return Err(Error::InvalidParam(format!("neighbour count {r} outside 1..{n}")));
    }
    Ok(())
}

/// `1 / d(P_j, r-th nearest neighbour)`; infinite when that distance is zero.
pub fn pseudo_density(d: &DistanceMatrix, r: usize) -> Result<Vec<f64>> {
    check_r(d.n(), r)?;
    Ok((0..d.n())
        .map(|j| {
            let nn = neighbours(d, j, r);
            1.0 / d.get(j, nn[r - 1])
        })
        .collect())
}

/// Each item moves to the densest member of its `r`-neighbourhood (itself
/// included) until it stops; items are labelled by the mode they reach.
///
/// Density ties prefer the lower index, so every move strictly increases the
/// pair (density, -index) and paths end after at most `n` steps.
pub fn medoid_shift(d: &DistanceMatrix, r: usize, max_iter: usize) -> Result<ShiftResult> {
    let n = d.n();
    check_r(n, r)?;
    let rho = pseudo_density(d, r)?;
    let better = |a: usize, b: usize| rho[a] > rho[b] || (rho[a] == rho[b] && a < b);
    let next: Vec<usize> = (0..n)
        .map(|j| {
            neighbours(d, j, r)
                .into_iter()
                .fold(j, |best, c| if better(c, best) { c } else { best })
        })
        .collect();
    let mut modes_of = vec![0; n];
    let mut longest = 0;
    for (j, slot) in modes_of.iter_mut().enumerate() {
        let mut at = j;
        let mut steps = 0;
        while next[at] != at {
            if steps == max_iter {
                return Err(Error::Convergence {
                    iterations: max_iter,
                    residual: f64::NAN,
                });
            }
            at = next[at];
            steps += 1;
        }
        *slot = at;
        longest = longest.max(steps);
    }
    Ok(finish(&modes_of, longest))
}

fn finish(raw: &[usize], iterations: usize) -> ShiftResult {
    let labels = canonical_labels(raw);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut modes = vec![usize::MAX; k];
    for (i, &l) in labels.iter().enumerate() {
        if modes[l] == usize::MAX {
            modes[l] = raw[i];
        }
    }
    ShiftResult {
        labels,
        modes,
        iterations,
    }
}

/// Mean-shift by iterated barycenters: each item repeatedly replaces its
/// current position by the equal-weight barycenter of its `r` nearest items,
/// until the neighbour set stops changing. Items whose final neighbour sets
/// overlap in more than half their members share a cluster.
pub fn barycenter_shift<C: Centroid>(items: &[C], r: usize, max_iter: usize) -> Result<ShiftResult> {
    let n = items.len();
    if r == 0 || r > n {
        return Err(Error::InvalidParam(format!("neighbour count {r} outside 1..={n}")));
    }
    let mut finals: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut longest = 0;
    for j in 0..n {
        let mut current = items[j].clone();
        let mut set: Vec<usize> = Vec::new();
        let mut steps = 0;
        loop {
            let mut scored = items
                .iter()
                .enumerate()
                .map(|(i, x)| Ok((x.dist_sq(&current)?, i)))
                .collect::<Result<Vec<_>>>()?;
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut nn: Vec<usize> = scored.iter().take(r).map(|x| x.1).collect();
            nn.sort_unstable();
            if nn == set || steps == max_iter {
                break;
            }
            let members: Vec<&C> = nn.iter().map(|&i| &items[i]).collect();
            current = C::barycenter(&members, &vec![1.0 / r as f64; r])?;
            set = nn;
            steps += 1;
        }
        longest = longest.max(steps);
        finals.push(set);
    }
    // Nearby modes rarely settle on exactly the same set, so items whose
    // final sets share more than half their members are joined.
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in 0..i {
            let shared = finals[i].iter().filter(|x| finals[j].binary_search(x).is_ok()).count();
            if 2 * shared > r {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let raw: Vec<usize> = (0..n).map(|i| root(&mut parent, i)).collect();
    let mut res = finish(&raw, longest);
    res.modes = res.modes.iter().map(|&p| finals[p][0]).collect();
    Ok(res)
}
