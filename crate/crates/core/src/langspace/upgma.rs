//! Average-linkage (UPGMA) trees and flat cuts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{check_labels, DistanceMatrix};
use crate::error::{Error, Result};

/// Relative slack under which two linkage distances count as tied.
const TIE_TOL: f64 = 1e-12;

/// One merge. Node ids `0..n` are leaves; merge `k` creates node `n + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    leaves: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn leaves(&self) -> usize {
        self.leaves
    }

    /// Merges in creation order; heights never decrease.
    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    fn height(&self, node: usize) -> f64 {
        if node < self.leaves {
            0.0
        } else {
            self.merges[node - self.leaves].height
        }
    }

    /// Leaves under `node`, ascending.
    pub fn members(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.leaves {
                out.push(x);
            } else {
                let m = self.merges[x - self.leaves];
                stack.push(m.left);
                stack.push(m.right);
            }
        }
        out.sort_unstable();
        out
    }

    /// Newick with branch lengths (parent height minus child height).
    pub fn newick(&self, labels: &[String]) -> Result<String> {
        if labels.len() != self.leaves {
            return Err(Error::MissingLabels(format!(
                "{} labels for {} leaves",
                labels.len(),
                self.leaves
            )));
        }
        let mut out = String::new();
        let root = self.leaves + self.merges.len() - 1;
        self.write_node(root, labels, &mut out);
        out.push(';');
        Ok(out)
    }

    fn write_node(&self, node: usize, labels: &[String], out: &mut String) {
        if node < self.leaves {
            out.push_str(&newick_label(&labels[node]));
            return;
        }
        let m = self.merges[node - self.leaves];
        out.push('(');
        for (k, child) in [m.left, m.right].into_iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            self.write_node(child, labels, out);
            let _ = write!(out, ":{}", m.height - self.height(child));
        }
        out.push(')');
    }

    /// Flat clusters after undoing the `k - 1` highest merges. Clusters are
    /// numbered in order of their smallest leaf.
    pub fn cut(&self, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.leaves {
            return Err(Error::InvalidArgument(format!(
                "k must lie in 1..={}, got {k}",
                self.leaves
            )));
        }
        let mut parent: Vec<usize> = (0..self.leaves).collect();
        fn find(parent: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while parent[r] != r {
                r = parent[r];
            }
            parent[x] = r;
            r
        }
        let mut rep = Vec::with_capacity(self.merges.len());
        for m in &self.merges[..self.leaves - k] {
            let leaf_of = |node: usize, rep: &Vec<usize>| {
                if node < self.leaves {
                    node
                } else {
                    rep[node - self.leaves]
                }
            };
            let (a, b) = (leaf_of(m.left, &rep), leaf_of(m.right, &rep));
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
            rep.push(ra.min(rb));
        }
        let mut ids = BTreeMap::new();
        Ok((0..self.leaves)
            .map(|i| {
                let root = find(&mut parent, i);
                let next = ids.len();
                *ids.entry(root).or_insert(next)
            })
            .collect())
    }
}

fn newick_label(label: &str) -> String {
    if label.chars().any(|c| "()[]':;, \t".contains(c)) {
        format!("'{}'", label.replace('\'', "''"))
    } else {
        label.to_string()
    }
}

/// UPGMA over `d`. Ties go to the lexicographically smallest pair of active
/// clusters, each cluster indexed by its smallest leaf.
pub fn upgma_cluster(d: &DistanceMatrix) -> Result<Dendrogram> {
    let n = d.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "UPGMA needs at least 2 points, got {n}"
        )));
    }
    // Active clusters stay sorted by smallest leaf: a merge keeps the lower
    // slot and drops the higher one.
    let mut node: Vec<usize> = (0..n).collect();
    let mut size: Vec<usize> = vec![1; n];
    let mut dist: Vec<Vec<f64>> = (0..n).map(|i| d.row(i).to_vec()).collect();
    let mut merges = Vec::with_capacity(n - 1);
    while node.len() > 1 {
        let m = node.len();
        let (mut bi, mut bj, mut best) = (0, 1, dist[0][1]);
        for i in 0..m {
            for j in i + 1..m {
                let v = dist[i][j];
                if v < best - TIE_TOL * best.abs().max(1.0) {
                    (bi, bj, best) = (i, j, v);
                }
            }
        }
        let floor = merges.last().map_or(0.0, |x: &Merge| x.height);
        let merged = Merge {
            left: node[bi],
            right: node[bj],
            height: (best / 2.0).max(floor),
            size: size[bi] + size[bj],
        };
        let (si, sj) = (size[bi] as f64, size[bj] as f64);
        for k in 0..m {
            if k != bi && k != bj {
                let v = (si * dist[bi][k] + sj * dist[bj][k]) / (si + sj);
                dist[bi][k] = v;
                dist[k][bi] = v;
            }
        }
        node[bi] = n + merges.len();
        size[bi] = merged.size;
        merges.push(merged);
        node.remove(bj);
        size.remove(bj);
        dist.remove(bj);
        for row in &mut dist {
            row.remove(bj);
        }
    }
    Ok(Dendrogram { leaves: n, merges })
}

/// Fraction of points whose cluster's majority family is their own.
pub fn purity(assignment: &[usize], labels: &[String]) -> Result<f64> {
    check_labels(labels, assignment.len())?;
    let mut counts: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for (c, l) in assignment.iter().zip(labels) {
        *counts.entry(*c).or_default().entry(l.as_str()).or_default() += 1;
    }
    let hits: usize = counts
        .values()
        .map(|m| m.values().copied().max().unwrap_or(0))
        .sum();
    Ok(hits as f64 / assignment.len() as f64)
}

/// Mean silhouette. Points in singleton clusters score 0, as does every
/// point when there is only one cluster.
pub fn silhouette(assignment: &[usize], d: &DistanceMatrix) -> Result<f64> {
    let n = d.len();
    if assignment.len() != n {
        return Err(Error::shape("silhouette", &[n], &[assignment.len()]));
    }
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if j != i {
                sums[assignment[j]] += d.get(i, j);
                counts[assignment[j]] += 1;
            }
        }
        let own = assignment[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() && a.max(b) > 0.0 {
            total += (b - a) / a.max(b);
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterScore {
    pub assignment: Vec<usize>,
    pub purity: f64,
    pub silhouette: f64,
}

pub fn cut_and_score(
    dendrogram: &Dendrogram,
    k: usize,
    labels: &[String],
    d: &DistanceMatrix,
) -> Result<ClusterScore> {
    check_labels(labels, dendrogram.leaves())?;
    if d.len() != dendrogram.leaves() {
        return Err(Error::shape(
            "cut_and_score",
            &[dendrogram.leaves()],
            &[d.len()],
        ));
    }
    let assignment = dendrogram.cut(k)?;
    Ok(ClusterScore {
        purity: purity(&assignment, labels)?,
        silhouette: silhouette(&assignment, d)?,
        assignment,
    })
}
