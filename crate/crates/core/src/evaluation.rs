//! Embedding evaluation: kNN graphs, the normalized Laplacian score of a
//! label vector, and feature ranking for a selected group of points.
//!
//! The score uses the Laplacian `L = D - A` of the union-symmetrized kNN
//! graph. Small scores mean neighbors tend to share labels.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{knn_search, NeighborLists};
use crate::data::{Dataset, EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};

pub const DEFAULT_KS: [usize; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];
pub const RANK_LAMBDA: f64 = 1e-2;
pub const RANK_TOL: f64 = 1e-6;
pub const RANK_MAX_ITERS: usize = 10_000;

/// Undirected binary kNN graph.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    adjacency: Vec<Vec<u32>>,
}

impl KnnGraph {
    /// Builds a graph from undirected edge lists; duplicate edges are merged.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::invalid(format!("edge ({a}, {b}) out of range for n={n}")));
            }
            if a == b {
                return Err(Error::invalid(format!("self-loop at {a}")));
            }
            adjacency[a].push(b as u32);
            adjacency[b].push(a as u32);
        }
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self { adjacency })
    }

    fn from_neighbors(n: usize, neighbors: impl Fn(usize) -> Vec<usize>) -> Self {
        let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n];
        for i in 0..n {
            for j in neighbors(i) {
                adjacency[i].push(j as u32);
                adjacency[j].push(i as u32);
            }
        }
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
        }
        Self { adjacency }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&(j as u32)).is_ok()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .map(|&j| j as usize)
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }
}

/// kNN graph of the embedding, directed edges symmetrized by union.
pub fn knn_graph(y: &EmbeddingMatrix, k: usize) -> Result<KnnGraph> {
    let nl = knn_search(y.coords(), k)?;
    Ok(graph_prefix(&nl, k))
}

fn graph_prefix(nl: &NeighborLists, k: usize) -> KnnGraph {
    KnnGraph::from_neighbors(nl.n(), |i| nl.indices(i)[..k].to_vec())
}

/// How the degree normalization enters the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreNormalization {
    /// `sum_l (n_l / n) sum_{edges} (f_l(i) - f_l(j))^2 / sqrt(d_i d_j)`:
    /// zero whenever no edge joins different labels.
    #[default]
    EdgeWeighted,
    /// `sum_l (n_l / n) g_l' (D - A) g_l` with `g_l = D^{-1/2} f_l`. Equal to
    /// the edge-weighted form on regular graphs, but nonzero for constant
    /// labels on irregular ones.
    VertexScaled,
}

impl fmt::Display for ScoreNormalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreNormalization::EdgeWeighted => "edge-weighted",
            ScoreNormalization::VertexScaled => "vertex-scaled",
        })
    }
}

impl FromStr for ScoreNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge-weighted" => Ok(Self::EdgeWeighted),
            "vertex-scaled" => Ok(Self::VertexScaled),
            other => Err(Error::invalid(format!(
                "unknown normalization {other:?} (edge-weighted|vertex-scaled)"
            ))),
        }
    }
}

pub fn laplacian_score(graph: &KnnGraph, labels: &LabelVector) -> Result<f64> {
    laplacian_score_with(graph, labels, ScoreNormalization::default())
}

pub fn laplacian_score_with(graph: &KnnGraph, labels: &LabelVector, norm: ScoreNormalization) -> Result<f64> {
    let n = graph.n();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for a graph of {n} nodes", labels.len())));
    }
    if let Some(i) = (0..n).find(|&i| graph.degree(i) == 0) {
        return Err(Error::invalid(format!("node {i} is isolated")));
    }
    let share: Vec<f64> = labels.class_sizes().iter().map(|&c| c as f64 / n as f64).collect();
    let l = labels.labels();
    let mut score = 0.0;
    for (i, j) in graph.edges() {
        let (di, dj) = (graph.degree(i) as f64, graph.degree(j) as f64);
        let (li, lj) = (l[i], l[j]);
        score += match norm {
            ScoreNormalization::EdgeWeighted => {
                if li == lj {
                    0.0
                } else {
                    (share[li] + share[lj]) / (di * dj).sqrt()
                }
            }
            ScoreNormalization::VertexScaled => {
                if li == lj {
                    share[li] * (1.0 / di.sqrt() - 1.0 / dj.sqrt()).powi(2)
                } else {
                    share[li] / di + share[lj] / dj
                }
            }
        };
    }
    Ok(score)
}

/// `(k, score)` for every `k`, from a single kNN search at the largest `k`.
pub fn score_curve(y: &EmbeddingMatrix, labels: &LabelVector, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    score_curve_with(y, labels, ks, ScoreNormalization::default())
}

pub fn score_curve_with(
    y: &EmbeddingMatrix,
    labels: &LabelVector,
    ks: &[usize],
    norm: ScoreNormalization,
) -> Result<Vec<(usize, f64)>> {
    if labels.len() != y.n() {
        return Err(Error::Shape(format!("{} labels for {} points", labels.len(), y.n())));
    }
    let Some(&kmax) = ks.iter().max() else {
        return Ok(Vec::new());
    };
    if ks.contains(&0) {
        return Err(Error::invalid("k must be at least 1"));
    }
    let nl = knn_search(y.coords(), kmax)?;
    ks.par_iter()
        .map(|&k| laplacian_score_with(&graph_prefix(&nl, k), labels, norm).map(|s| (k, s)))
        .collect()
}

/// Parses a `start:end:step` (inclusive) range or a comma-separated list.
pub fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::invalid(format!("bad k range {s:?} (use start:end:step or a,b,c)"));
    let ks: Vec<usize> = if s.contains(':') {
        let parts: Vec<usize> = s
            .split(':')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, end, step] = parts[..] else {
            return Err(bad());
        };
        if step == 0 || start > end {
            return Err(bad());
        }
        (start..=end).step_by(step).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if ks.is_empty() || ks.contains(&0) {
        return Err(bad());
    }
    Ok(ks)
}

/// Newline-separated 0-based indices; blank lines and `#` comments skipped.
pub fn parse_selection(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.parse()
                .map_err(|_| Error::invalid(format!("bad selection index {l:?}")))
        })
        .collect()
}

/// Logistic-regression weights separating a selection from the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub attribute_names: Vec<String>,
    /// Signed weight per attribute, in attribute order.
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Attribute indices by descending `|weight|`, ties by index.
    pub order: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl FeatureRanking {
    /// `(index, name, weight)` in ranked order.
    pub fn ranked(&self) -> impl Iterator<Item = (usize, &str, f64)> + '_ {
        self.order
            .iter()
            .map(|&j| (j, self.attribute_names[j].as_str(), self.weights[j]))
    }
}

fn check_selection(n: usize, selection: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; n];
    for &i in selection {
        if i >= n {
            return Err(Error::invalid(format!("selection index {i} out of range for n={n}")));
        }
        mask[i] = true;
    }
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 || m == n {
        return Err(Error::invalid(format!(
            "selection must be a non-empty proper subset ({m} of {n} points)"
        )));
    }
    Ok(mask)
}

/// Standardized columns; constant columns become zero.
fn standardize(data: &Dataset) -> Vec<f64> {
    let (n, d) = (data.n(), data.d());
    let x = data.as_slice();
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        let mean = (0..n).map(|i| x[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (x[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            for i in 0..n {
                out[i * d + j] = (x[i * d + j] - mean) / sd;
            }
        }
    }
    out
}

/// Largest eigenvalue of `X'X / n` for `X` with an appended ones column.
fn gram_top_eigenvalue(x: &[f64], n: usize, d: usize) -> f64 {
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut next = vec![0.0; d + 1];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let xv: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d];
            for (o, a) in next.iter_mut().zip(row) {
                *o += a * xv;
            }
            next[d] += xv;
        }
        let norm = next.iter().map(|a| a * a).sum::<f64>().sqrt() / n as f64;
        if norm == 0.0 {
            return 0.0;
        }
        for (a, b) in v.iter_mut().zip(&next) {
            *a = b / (norm * n as f64);
        }
        let converged = (norm - lambda).abs() <= 1e-10 * norm;
        lambda = norm;
        if converged {
            break;
        }
    }
    lambda
}

/// Ranks attributes by how strongly they separate `selection` from the
/// other points: L2-regularized logistic regression on standardized
/// attributes (intercept unpenalized), fitted by full-batch gradient descent.
pub fn feature_rank(data: &Dataset, selection: &[usize]) -> Result<FeatureRanking> {
    let (n, d) = (data.n(), data.d());
    let mask = check_selection(n, selection)?;
    let x = standardize(data);
    let target: Vec<f64> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();

    // Logistic loss is 1/4-smooth in the margin.
    let step = 1.0 / (0.25 * gram_top_eigenvalue(&x, n, d) + RANK_LAMBDA);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad = vec![0.0; d];
    while iterations < RANK_MAX_ITERS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let z: f64 = row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
            let r = 1.0 / (1.0 + (-z).exp()) - target[i];
            for (g, a) in grad.iter_mut().zip(row) {
                *g += r * a;
            }
            gb += r;
        }
        let inv_n = 1.0 / n as f64;
        let mut inf = (gb * inv_n).abs();
        for (g, wj) in grad.iter_mut().zip(&w) {
            *g = *g * inv_n + RANK_LAMBDA * wj;
            inf = inf.max(g.abs());
        }
        if inf < RANK_TOL {
            converged = true;
            break;
        }
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj -= step * g;
        }
        b -= step * gb * inv_n;
        iterations += 1;
    }
    if !converged {
        log::warn!("feature ranking stopped after {RANK_MAX_ITERS} iterations without converging");
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &c| w[c].abs().total_cmp(&w[a].abs()).then(a.cmp(&c)));
    Ok(FeatureRanking {
        attribute_names: data.attribute_names().to_vec(),
        weights: w,
        intercept: b,
        order,
        iterations,
        converged,
    })
}
