use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One agglomeration. Leaves are `0..n`; the cluster created by merge `k` has id `n + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

/// Ward agglomerative clustering of a symmetric dissimilarity matrix, using the Lance-Williams
/// update. Ties go to the first pair in slot order.
pub fn ward_cluster(d: &[Vec<f64>]) -> Result<Vec<Merge>> {
    let n = d.len();
    for (i, row) in d.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidArgument("dissimilarity matrix is not square".into()));
        }
        for j in 0..n {
            if !row[j].is_finite() || (row[j] - d[j][i]).abs() > 1e-12 * row[j].abs().max(1.0) {
                return Err(Error::InvalidArgument(format!("dissimilarity is not symmetric and finite at ({i}, {j})")));
            }
        }
    }
    let mut dist: Vec<Vec<f64>> = d.to_vec();
    // active cluster id and size per slot
    let mut id: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if id[i].is_none() {
                continue;
            }
            for j in i + 1..n {
                if id[j].is_some() && best.map_or(true, |(bd, _, _)| dist[i][j] < bd) {
                    best = Some((dist[i][j], i, j));
                }
            }
        }
        let (h, i, j) = best.expect("at least two active clusters");
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if k == i || k == j || id[k].is_none() {
                continue;
            }
            let sk = size[k] as f64;
            let t = si + sj + sk;
            let v = ((si + sk) * dist[i][k].powi(2) + (sj + sk) * dist[j][k].powi(2) - sk * h * h) / t;
            let v = v.max(0.0).sqrt();
            dist[i][k] = v;
            dist[k][i] = v;
        }
        let (a, b) = (id[i].unwrap(), id[j].unwrap());
        merges.push(Merge {
            a: a.min(b),
            b: a.max(b),
            height: h,
            size: size[i] + size[j],
        });
        id[i] = Some(n + step);
        size[i] += size[j];
        id[j] = None;
    }
    Ok(merges)
}

/// Leaves under every cluster id, for reading a merge list.
pub fn cluster_members(n: usize, merges: &[Merge]) -> Vec<Vec<usize>> {
    let mut m: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for g in merges {
        let mut v = m[g.a].clone();
        v.extend(&m[g.b]);
        v.sort_unstable();
        m.push(v);
    }
    m
}
