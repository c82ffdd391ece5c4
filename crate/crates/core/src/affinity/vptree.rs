//! Vantage-point tree for exact k-nearest-neighbour queries.
//!
//! Results are exactly those of a brute-force scan ordered by
//! `(squared distance, index)`: pruning keeps every subtree whose lower bound
//! does not exceed the current k-th distance, so equal-distance candidates
//! with a lower index are never skipped.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use crate::rng;

/// Row-major point set borrowed from a matrix.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        assert!(dim > 0 && data.len() % dim == 0);
        Self { data, dim }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.row(i), self.row(j))
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: u32,
    threshold: f64,
    inside: u32,
    outside: u32,
}

const NONE: u32 = u32::MAX;

/// Candidate ordered by `(squared distance, index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    sq: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq
            .total_cmp(&other.sq)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct VpTree<'a> {
    points: Points<'a>,
    nodes: Vec<Node>,
    root: u32,
}

impl<'a> VpTree<'a> {
    pub fn build(points: Points<'a>) -> Self {
        let n = points.len();
        assert!(n < u32::MAX as usize, "too many points for a u32-indexed tree");
        let mut items: Vec<(u32, f64)> = (0..n as u32).map(|i| (i, 0.0)).collect();
        let mut nodes = Vec::with_capacity(n);
        // Fixed seed: vantage choice only affects speed, never results.
        let mut rng = rng::seeded(0x5eed);
        let root = Self::build_rec(&points, &mut items, &mut nodes, &mut rng);
        Self {
            points,
            nodes,
            root,
        }
    }

    fn build_rec<R: Rng>(
        points: &Points<'_>,
        items: &mut [(u32, f64)],
        nodes: &mut Vec<Node>,
        rng: &mut R,
    ) -> u32 {
        if items.is_empty() {
            return NONE;
        }
        let pick = rng.random_range(0..items.len());
        items.swap(0, pick);
        let vp = items[0].0 as usize;
        let id = nodes.len() as u32;
        nodes.push(Node {
            point: vp as u32,
            threshold: 0.0,
            inside: NONE,
            outside: NONE,
        });
        let rest = &mut items[1..];
        if rest.is_empty() {
            return id;
        }
        for it in rest.iter_mut() {
            it.1 = points.sq_dist(vp, it.0 as usize).sqrt();
        }
        let mid = rest.len() / 2;
        rest.select_nth_unstable_by(mid, |a, b| a.1.total_cmp(&b.1));
        // inside: dist <= threshold, outside: dist >= threshold
        let threshold = rest[mid].1;
        let (inside, outside) = rest.split_at_mut(mid);
        let inside_id = Self::build_rec(points, inside, nodes, rng);
        let outside_id = Self::build_rec(points, outside, nodes, rng);
        let node = &mut nodes[id as usize];
        node.threshold = threshold;
        node.inside = inside_id;
        node.outside = outside_id;
        id
    }

    /// The `k` nearest points to point `query` (excluding itself), sorted by
    /// `(squared distance, index)`.
    pub fn knn(&self, query: usize, k: usize) -> Vec<(usize, f64)> {
        let q = self.points.row(query);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(self.root, q, query, k, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.sq)).collect()
    }

    fn search(
        &self,
        node: u32,
        q: &[f64],
        exclude: usize,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if node == NONE {
            return;
        }
        let nd = self.nodes[node as usize];
        let p = nd.point as usize;
        let sq = sq_dist(q, self.points.row(p));
        if p != exclude {
            let cand = Candidate { sq, index: p };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("non-empty") {
                heap.pop();
                heap.push(cand);
            }
        }
        if nd.inside == NONE && nd.outside == NONE {
            return;
        }
        let dist = sq.sqrt();
        let t = nd.threshold;
        let tau = |heap: &BinaryHeap<Candidate>| {
            if heap.len() < k {
                f64::INFINITY
            } else {
                heap.peek().expect("non-empty").sq.sqrt()
            }
        };
        // Rounding slack on the triangle-inequality bounds; only ever makes
        // the search visit more, never less.
        let slack = 1e-9 * (1.0 + dist + t);
        if dist < t {
            if dist - t <= tau(heap) + slack {
                self.search(nd.inside, q, exclude, k, heap);
            }
            if t - dist <= tau(heap) + slack {
                self.search(nd.outside, q, exclude, k, heap);
            }
        } else {
            if t - dist <= tau(heap) + slack {
                self.search(nd.outside, q, exclude, k, heap);
            }
            if dist - t <= tau(heap) + slack {
                self.search(nd.inside, q, exclude, k, heap);
            }
        }
    }
}
