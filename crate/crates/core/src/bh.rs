//! Barnes-Hut approximation with per-cell label histograms.
//!
//! Every cell of the quadtree carries its center of mass, point count and a
//! histogram of labels. When a cell is far enough from the query point `i`
//! its points are replaced by `n_cell` copies at the center of mass, and the
//! histogram tells how many of them share `i`'s label:
//!
//! ```text
//! weight = alpha' * n_cell[l_i] + beta' * (n_cell - n_cell[l_i])
//! Z += n_cell * u,   W += weight * u,   rep += weight * u^2 * (y_i - y_cell)
//! ```
//!
//! `Z`, `W` and the repulsion are collected in a single traversal per point,
//! so one gradient costs O(L n log n) in total (the `L` comes from the
//! histograms).

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::SparseAffinities;
use crate::data::{EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::exact::{assemble, attraction, check_consistent, GlobalSums, GradientEval};
use crate::prior::PriorSpec;

pub const DEFAULT_THETA: f64 = 0.5;
/// Cells this deep become leaves even if their points still differ.
const MAX_DEPTH: usize = 64;

/// Summarization test applied to a cell of size `r` at distance `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// `r / d < theta`.
    #[default]
    Standard,
    /// `r / d^2 < theta`.
    Paper,
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::Standard => "standard",
            Criterion::Paper => "paper",
        })
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Criterion::Standard),
            "paper" => Ok(Criterion::Paper),
            other => Err(Error::invalid(format!("unknown criterion {other:?} (standard|paper)"))),
        }
    }
}

/// `true` when a cell of longest side `r_cell` at distance `dist` may be
/// summarized. Never true at `dist == 0`.
#[inline]
pub fn summarize_criterion(r_cell: f64, dist: f64, theta: f64, criterion: Criterion) -> bool {
    if dist <= 0.0 {
        return false;
    }
    match criterion {
        Criterion::Standard => r_cell / dist < theta,
        Criterion::Paper => r_cell / (dist * dist) < theta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellId(u32);

#[derive(Debug, Clone, Copy)]
struct Cell {
    center: [f64; 2],
    half: [f64; 2],
    com: [f64; 2],
    count: u32,
    start: u32,
    end: u32,
    first_child: u32,
    n_children: u8,
    /// Leaf whose points all share one position.
    uniform: bool,
}

impl Cell {
    fn placeholder() -> Self {
        Cell {
            center: [0.0; 2],
            half: [0.0; 2],
            com: [0.0; 2],
            count: 0,
            start: 0,
            end: 0,
            first_child: 0,
            n_children: 0,
            uniform: false,
        }
    }
}

/// Quadtree over a 2-d embedding with label histograms per cell.
#[derive(Debug, Clone)]
pub struct LabelQuadTree {
    cells: Vec<Cell>,
    hist: Vec<u32>,
    num_labels: usize,
    /// Point indices, grouped so every cell covers a contiguous range.
    perm: Vec<u32>,
    /// Position of each point in `perm`.
    pos: Vec<u32>,
    coords: Vec<f64>,
    labels: Vec<u32>,
}

/// Accumulated interaction of one point with the rest of the tree.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PointForces {
    pub z: f64,
    pub w: f64,
    /// `sum weight * u^2 * (y_i - y_cell)`.
    pub rep: [f64; 2],
    /// Points accounted for by visited leaves and summarized cells.
    pub visited: usize,
}

impl LabelQuadTree {
    pub fn build(y: &EmbeddingMatrix, labels: &LabelVector) -> Result<Self> {
        if y.dim() != 2 {
            return Err(Error::invalid(format!(
                "the Barnes-Hut tree supports 2-d embeddings only (got {})",
                y.dim()
            )));
        }
        let n = y.n();
        if n == 0 {
            return Err(Error::invalid("cannot build a tree over zero points"));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
        }
        let coords = y.as_slice().to_vec();
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding contains non-finite coordinates"));
        }
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in coords.chunks_exact(2) {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let mut tree = LabelQuadTree {
            cells: Vec::with_capacity(2 * n),
            hist: Vec::new(),
            num_labels: labels.num_classes().max(1),
            perm: (0..n as u32).collect(),
            pos: vec![0; n],
            coords,
            labels: labels.labels().iter().map(|&l| l as u32).collect(),
        };
        tree.push_cell();
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let half = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])];
        let mut scratch = vec![0u32; n];
        tree.fill(0, 0, n, center, half, 0, &mut scratch);
        for (k, &p) in tree.perm.iter().enumerate() {
            tree.pos[p as usize] = k as u32;
        }
        Ok(tree)
    }

    fn push_cell(&mut self) -> usize {
        self.cells.push(Cell::placeholder());
        self.hist.resize(self.hist.len() + self.num_labels, 0);
        self.cells.len() - 1
    }

    #[inline]
    fn point(&self, j: usize) -> [f64; 2] {
        [self.coords[2 * j], self.coords[2 * j + 1]]
    }

    #[allow(clippy::too_many_arguments)]
    fn fill(
        &mut self,
        slot: usize,
        start: usize,
        end: usize,
        center: [f64; 2],
        half: [f64; 2],
        depth: usize,
        scratch: &mut [u32],
    ) {
        let first = self.point(self.perm[start] as usize);
        let uniform = self.perm[start..end]
            .iter()
            .all(|&j| self.point(j as usize) == first);
        {
            let c = &mut self.cells[slot];
            c.center = center;
            c.half = half;
            c.count = (end - start) as u32;
            c.start = start as u32;
            c.end = end as u32;
        }
        if end - start == 1 || uniform || depth >= MAX_DEPTH {
            let mut sum = [0.0; 2];
            for k in start..end {
                let j = self.perm[k] as usize;
                let p = self.point(j);
                sum[0] += p[0];
                sum[1] += p[1];
                self.hist[slot * self.num_labels + self.labels[j] as usize] += 1;
            }
            let m = (end - start) as f64;
            let c = &mut self.cells[slot];
            c.com = if uniform { first } else { [sum[0] / m, sum[1] / m] };
            c.uniform = uniform;
            return;
        }

        // Stable counting partition into quadrants (x > cx) + 2 (y > cy).
        let quad = |p: [f64; 2]| usize::from(p[0] > center[0]) + 2 * usize::from(p[1] > center[1]);
        let mut counts = [0usize; 4];
        for k in start..end {
            counts[quad(self.point(self.perm[k] as usize))] += 1;
        }
        let mut offsets = [0usize; 4];
        for q in 1..4 {
            offsets[q] = offsets[q - 1] + counts[q - 1];
        }
        let mut cursor = offsets;
        for k in start..end {
            let j = self.perm[k];
            let q = quad(self.point(j as usize));
            scratch[cursor[q]] = j;
            cursor[q] += 1;
        }
        self.perm[start..end].copy_from_slice(&scratch[..end - start]);

        let nonempty: Vec<usize> = (0..4).filter(|&q| counts[q] > 0).collect();
        let first_child = self.cells.len();
        for _ in &nonempty {
            self.push_cell();
        }
        {
            let c = &mut self.cells[slot];
            c.first_child = first_child as u32;
            c.n_children = nonempty.len() as u8;
        }
        let child_half = [0.5 * half[0], 0.5 * half[1]];
        for (k, &q) in nonempty.iter().enumerate() {
            let child_center = [
                center[0] + if q & 1 == 1 { child_half[0] } else { -child_half[0] },
                center[1] + if q & 2 == 2 { child_half[1] } else { -child_half[1] },
            ];
            let s = start + offsets[q];
            self.fill(first_child + k, s, s + counts[q], child_center, child_half, depth + 1, scratch);
        }

        let mut com = [0.0; 2];
        let l = self.num_labels;
        for k in 0..nonempty.len() {
            let child = first_child + k;
            let cc = self.cells[child];
            com[0] += cc.count as f64 * cc.com[0];
            com[1] += cc.count as f64 * cc.com[1];
            for b in 0..l {
                self.hist[slot * l + b] += self.hist[child * l + b];
            }
        }
        let m = (end - start) as f64;
        self.cells[slot].com = [com[0] / m, com[1] / m];
    }

    pub fn root(&self) -> CellId {
        CellId(0)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn children(&self, cell: CellId) -> impl Iterator<Item = CellId> {
        let c = self.cells[cell.0 as usize];
        (c.first_child..c.first_child + c.n_children as u32).map(CellId)
    }

    pub fn is_leaf(&self, cell: CellId) -> bool {
        self.cells[cell.0 as usize].n_children == 0
    }

    pub fn count(&self, cell: CellId) -> usize {
        self.cells[cell.0 as usize].count as usize
    }

    pub fn center_of_mass(&self, cell: CellId) -> [f64; 2] {
        self.cells[cell.0 as usize].com
    }

    /// Longest side of the cell's box.
    pub fn radius(&self, cell: CellId) -> f64 {
        let h = self.cells[cell.0 as usize].half;
        2.0 * h[0].max(h[1])
    }

    pub fn histogram(&self, cell: CellId) -> &[u32] {
        let k = cell.0 as usize * self.num_labels;
        &self.hist[k..k + self.num_labels]
    }

    /// Indices of the points stored under `cell`.
    pub fn points(&self, cell: CellId) -> &[u32] {
        let c = self.cells[cell.0 as usize];
        &self.perm[c.start as usize..c.end as usize]
    }

    #[inline]
    fn contains(&self, c: &Cell, i: usize) -> bool {
        let p = self.pos[i];
        p >= c.start && p < c.end
    }

    /// Whether `cell` would be summarized for point `i`. A cell containing
    /// `i` never is.
    pub fn should_summarize(&self, cell: CellId, i: usize, theta: f64, criterion: Criterion) -> bool {
        let c = &self.cells[cell.0 as usize];
        if self.contains(c, i) {
            return false;
        }
        let y = self.point(i);
        let dist = ((y[0] - c.com[0]).powi(2) + (y[1] - c.com[1]).powi(2)).sqrt();
        summarize_criterion(self.radius(cell), dist, theta, criterion)
    }

    /// Repulsion and global-sum contributions for point `i`.
    pub fn point_forces(&self, i: usize, alpha: f64, beta: f64, theta: f64, criterion: Criterion) -> PointForces {
        let y = self.point(i);
        let li = self.labels[i] as usize;
        let l = self.num_labels;
        let mut out = PointForces::default();
        let mut stack: Vec<u32> = Vec::with_capacity(4 * MAX_DEPTH);
        stack.push(0);
        let add = |out: &mut PointForces, m: f64, same: f64, at: [f64; 2]| {
            let dx = y[0] - at[0];
            let dy = y[1] - at[1];
            let u = 1.0 / (1.0 + dx * dx + dy * dy);
            let wt = alpha * same + beta * (m - same);
            out.z += m * u;
            out.w += wt * u;
            let f = wt * u * u;
            out.rep[0] += f * dx;
            out.rep[1] += f * dy;
        };
        while let Some(id) = stack.pop() {
            let c = &self.cells[id as usize];
            let inside = self.contains(c, i);
            if c.n_children == 0 {
                if c.uniform {
                    let m = c.count as usize - usize::from(inside);
                    if m > 0 {
                        let same = self.hist[id as usize * l + li] as usize - usize::from(inside);
                        add(&mut out, m as f64, same as f64, c.com);
                        out.visited += m;
                    }
                } else {
                    for k in c.start..c.end {
                        let j = self.perm[k as usize] as usize;
                        if j != i {
                            let same = if self.labels[j] as usize == li { 1.0 } else { 0.0 };
                            add(&mut out, 1.0, same, self.point(j));
                            out.visited += 1;
                        }
                    }
                }
                continue;
            }
            if !inside {
                let dist = ((y[0] - c.com[0]).powi(2) + (y[1] - c.com[1]).powi(2)).sqrt();
                let r = 2.0 * c.half[0].max(c.half[1]);
                if summarize_criterion(r, dist, theta, criterion) {
                    let same = self.hist[id as usize * l + li] as f64;
                    add(&mut out, c.count as f64, same, c.com);
                    out.visited += c.count as usize;
                    continue;
                }
            }
            stack.extend(c.first_child..c.first_child + c.n_children as u32);
        }
        out
    }
}

/// Tree-approximated gradient with the attractive term scaled by
/// `exaggeration`. Attraction is exact over the sparse support of `p`.
pub fn approx_gradient_eval(
    p: &SparseAffinities,
    y: &EmbeddingMatrix,
    spec: &PriorSpec,
    theta: f64,
    criterion: Criterion,
    exaggeration: f64,
) -> Result<GradientEval> {
    check_consistent(Some(p), y, spec)?;
    if !(theta >= 0.0) {
        return Err(Error::invalid(format!("theta must be >= 0, got {theta}")));
    }
    let tree = LabelQuadTree::build(y, spec.labels())?;
    let (a, b) = (spec.alpha_prime(), spec.beta_prime());
    // Walk points in tree order so consecutive traversals share cells in
    // cache; the sums below still run in index order.
    let in_tree_order: Vec<PointForces> = tree
        .perm
        .par_iter()
        .map(|&i| tree.point_forces(i as usize, a, b, theta, criterion))
        .collect();
    let mut sums = GlobalSums { z: 0.0, w: 0.0 };
    let mut rep = Vec::with_capacity(2 * y.n());
    for &k in &tree.pos {
        let f = &in_tree_order[k as usize];
        sums.z += f.z;
        sums.w += f.w;
        rep.extend_from_slice(&f.rep);
    }
    let attr = attraction(p, y, exaggeration);
    let gradient = assemble(y.n(), 2, &attr, &rep, sums.w)?;
    Ok(GradientEval { gradient, sums })
}

pub fn approx_gradient(p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec, theta: f64) -> Result<Array2<f64>> {
    approx_gradient_eval(p, y, spec, theta, Criterion::Standard, 1.0).map(|g| g.gradient)
}
