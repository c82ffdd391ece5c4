//! High-dimensional affinities `p`.
//!
//! The default path follows the tree-accelerated t-SNE pipeline: exact kNN
//! with `k = floor(3 * perplexity)`, a per-point Gaussian bandwidth found by
//! binary search on the row entropy, and symmetrization
//! `p_ij = (p_{j|i} + p_{i|j}) / 2n`. [`build_affinities_global`] offers the
//! dense single-bandwidth form instead.

pub mod cache;
pub mod vptree;

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use vptree::{Points, VpTree};

pub const DEFAULT_PERPLEXITY: f64 = 30.0;
/// Entropy tolerance in bits.
pub const ENTROPY_TOL: f64 = 1e-5;
pub const MAX_BISECTIONS: usize = 200;
/// Largest `n` accepted by the dense single-bandwidth mode.
pub const MAX_DENSE_N: usize = 20_000;

/// For each point its `k` nearest other points, sorted by
/// `(squared distance, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborLists {
    k: usize,
    indices: Vec<usize>,
    sq_dists: Vec<f64>,
}

impl NeighborLists {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn sq_dists(&self, i: usize) -> &[f64] {
        &self.sq_dists[i * self.k..(i + 1) * self.k]
    }
}

fn contiguous(points: ArrayView2<'_, f64>) -> std::borrow::Cow<'_, [f64]> {
    match points.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(points.iter().copied().collect()),
    }
}

/// Exact kNN of every row of `points` by Euclidean distance; ties go to
/// the lower index.
pub fn knn_search(points: ArrayView2<'_, f64>, k: usize) -> Result<NeighborLists> {
    let (n, d) = points.dim();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k must satisfy 1 <= k < n (k={k}, n={n})")));
    }
    let data = contiguous(points);
    let pts = Points::new(&data, d);
    let tree = VpTree::build(pts);
    let rows: Vec<Vec<(usize, f64)>> = (0..n).into_par_iter().map(|i| tree.knn(i, k)).collect();
    let mut indices = Vec::with_capacity(n * k);
    let mut sq_dists = Vec::with_capacity(n * k);
    for row in rows {
        debug_assert_eq!(row.len(), k);
        for (j, s) in row {
            indices.push(j);
            sq_dists.push(s);
        }
    }
    Ok(NeighborLists {
        k,
        indices,
        sq_dists,
    })
}

/// Outcome of calibrating one row.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandwidth {
    pub sigma: f64,
    pub row: Vec<f64>,
    /// Shannon entropy of `row` in bits.
    pub entropy_bits: f64,
}

fn entropy_bits(row: &[f64]) -> f64 {
    -row.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

/// Finds `sigma_i` such that the conditional row
/// `p_{j|i} ~ exp(-d_ij^2 / 2 sigma_i^2)` has entropy `log2(perplexity)`.
///
/// The search runs on distances divided by their row mean, which makes the
/// result independent of the data's scale.
pub fn calibrate_bandwidth(row_sq_dists: &[f64], perplexity: f64) -> Result<Bandwidth> {
    let k = row_sq_dists.len();
    if k < 2 {
        return Err(Error::invalid(format!("bandwidth calibration needs k >= 2, got {k}")));
    }
    if !(perplexity > 1.0) || perplexity > k as f64 {
        return Err(Error::invalid(format!(
            "perplexity must satisfy 1 < perplexity <= k (perplexity={perplexity}, k={k})"
        )));
    }
    if row_sq_dists.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::invalid("squared distances must be finite and non-negative"));
    }
    let scale = row_sq_dists.iter().sum::<f64>() / k as f64;
    if scale == 0.0 {
        return Ok(Bandwidth {
            sigma: 1.0,
            row: vec![1.0 / k as f64; k],
            entropy_bits: (k as f64).log2(),
        });
    }
    let min = row_sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = row_sq_dists.iter().map(|d| (d - min) / scale).collect();
    let target = perplexity.ln();

    let mut beta = 1.0;
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut row = vec![0.0; k];
    for _ in 0..MAX_BISECTIONS {
        let mut sum = 0.0;
        for (p, &x) in row.iter_mut().zip(&shifted) {
            *p = (-beta * x).exp();
            sum += *p;
        }
        let mut h = 0.0;
        for (p, &x) in row.iter_mut().zip(&shifted) {
            *p /= sum;
            h += *p * x;
        }
        let h = sum.ln() + beta * h;
        let diff = h - target;
        if (diff / std::f64::consts::LN_2).abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    // Final row for the last beta tried (recomputed so row and sigma agree).
    let mut sum = 0.0;
    for (p, &x) in row.iter_mut().zip(&shifted) {
        *p = (-beta * x).exp();
        sum += *p;
    }
    row.iter_mut().for_each(|p| *p /= sum);
    Ok(Bandwidth {
        sigma: (scale / (2.0 * beta)).sqrt(),
        entropy_bits: entropy_bits(&row),
        row,
    })
}

/// Symmetric sparse joint distribution over ordered pairs `i != j`, stored
/// as compressed rows with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinities {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    /// Per-point bandwidths when built by perplexity calibration.
    sigmas: Option<Vec<f64>>,
}

impl SparseAffinities {
    /// Builds from raw CSR parts, validating structure and symmetry.
    pub fn from_csr(row_ptr: Vec<usize>, cols: Vec<u32>, vals: Vec<f64>) -> Result<Self> {
        let p = Self {
            row_ptr,
            cols,
            vals,
            sigmas: None,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.row_ptr.first() != Some(&0) || *self.row_ptr.last().unwrap_or(&1) != self.cols.len()
        {
            return Err(Error::invalid("malformed row pointer"));
        }
        if self.cols.len() != self.vals.len() {
            return Err(Error::invalid("column/value length mismatch"));
        }
        for i in 0..n {
            let (cols, vals) = self.row(i);
            if self.row_ptr[i] > self.row_ptr[i + 1] {
                return Err(Error::invalid("row pointer not monotone"));
            }
            for w in cols.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::invalid(format!("row {i}: columns not strictly sorted")));
                }
            }
            for (&j, &v) in cols.iter().zip(vals) {
                let j = j as usize;
                if j >= n || j == i {
                    return Err(Error::invalid(format!("row {i}: bad column {j}")));
                }
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!("row {i}: bad value {v}")));
                }
                if self.get(j, i) != Some(v) {
                    return Err(Error::invalid(format!("p[{i},{j}] has no equal mirror entry")));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.row_ptr.len().saturating_sub(1)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&(j as u32)).ok().map(|k| vals[k])
    }

    pub fn total(&self) -> f64 {
        self.vals.iter().sum()
    }

    pub fn sigmas(&self) -> Option<&[f64]> {
        self.sigmas.as_deref()
    }

    #[cfg(test)]
    pub(crate) fn parts(&self) -> (&[usize], &[u32], &[f64]) {
        (&self.row_ptr, &self.cols, &self.vals)
    }

    /// Iterates `(i, j, p_ij)` over stored entries.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n()).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &p)| (i, j as usize, p))
        })
    }
}

/// Symmetrizes per-point conditional rows. `cond[i]` lists `(j, p_{j|i})`.
fn symmetrize(n: usize, cond_cols: &[Vec<u32>], cond_vals: &[Vec<f64>]) -> SparseAffinities {
    // Transpose of the conditional matrix, rows sorted by construction
    // because we scan sources in increasing order.
    let mut t_count = vec![0usize; n + 1];
    for cols in cond_cols {
        for &j in cols {
            t_count[j as usize + 1] += 1;
        }
    }
    for i in 0..n {
        t_count[i + 1] += t_count[i];
    }
    let mut t_cols = vec![0u32; t_count[n]];
    let mut t_vals = vec![0.0; t_count[n]];
    let mut fill = t_count.clone();
    for (i, (cols, vals)) in cond_cols.iter().zip(cond_vals).enumerate() {
        for (&j, &v) in cols.iter().zip(vals) {
            let slot = &mut fill[j as usize];
            t_cols[*slot] = i as u32;
            t_vals[*slot] = v;
            *slot += 1;
        }
    }

    let denom = 2.0 * n as f64;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        // Merge the row (sorted by column) with the transposed row.
        let mut a: Vec<(u32, f64)> = cond_cols[i]
            .iter()
            .copied()
            .zip(cond_vals[i].iter().copied())
            .collect();
        a.sort_by_key(|e| e.0);
        let b_cols = &t_cols[t_count[i]..t_count[i + 1]];
        let b_vals = &t_vals[t_count[i]..t_count[i + 1]];
        let (mut x, mut y) = (0, 0);
        while x < a.len() || y < b_cols.len() {
            let take_a = y >= b_cols.len() || (x < a.len() && a[x].0 < b_cols[y]);
            let take_b = x >= a.len() || (y < b_cols.len() && b_cols[y] < a[x].0);
            if take_a {
                cols.push(a[x].0);
                vals.push(a[x].1 / denom);
                x += 1;
            } else if take_b {
                cols.push(b_cols[y]);
                vals.push(b_vals[y] / denom);
                y += 1;
            } else {
                // p_{j|i} + p_{i|j}; addition commutes, so the mirror entry
                // computed from row j is bit-identical.
                cols.push(a[x].0);
                vals.push((a[x].1 + b_vals[y]) / denom);
                x += 1;
                y += 1;
            }
        }
        row_ptr.push(cols.len());
    }
    let mut p = SparseAffinities {
        row_ptr,
        cols,
        vals,
        sigmas: None,
    };
    renormalize(&mut p);
    p
}

fn renormalize(p: &mut SparseAffinities) {
    let total = p.total();
    if total > 0.0 && total != 1.0 {
        p.vals.iter_mut().for_each(|v| *v /= total);
    }
}

/// Perplexity-calibrated sparse affinities. When `3 * perplexity >= n` the
/// neighbourhood is every other point and the perplexity is capped at
/// `n - 1`.
pub fn build_affinities(data: &Dataset, perplexity: f64) -> Result<SparseAffinities> {
    build_affinities_from_points(data.points(), perplexity)
}

pub fn build_affinities_from_points(
    points: ArrayView2<'_, f64>,
    perplexity: f64,
) -> Result<SparseAffinities> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::invalid("affinities need n >= 2"));
    }
    if !(perplexity >= 2.0) || !perplexity.is_finite() {
        return Err(Error::invalid(format!("perplexity must be >= 2, got {perplexity}")));
    }
    let k_full = (3.0 * perplexity).floor() as usize;
    let (k, perp) = if k_full < n {
        (k_full, perplexity)
    } else {
        log::debug!("perplexity {perplexity} too large for n={n}; using all {} neighbours", n - 1);
        (n - 1, perplexity.min((n - 1) as f64))
    };
    let nn = knn_search(points, k)?;
    let calibrated: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if k == 1 {
                return Ok((vec![1.0], 1.0));
            }
            calibrate_bandwidth(nn.sq_dists(i), perp).map(|b| (b.row, b.sigma))
        })
        .collect::<Result<_>>()?;
    let cond_cols: Vec<Vec<u32>> = (0..n)
        .map(|i| nn.indices(i).iter().map(|&j| j as u32).collect())
        .collect();
    let (cond_vals, sigmas): (Vec<Vec<f64>>, Vec<f64>) = calibrated.into_iter().unzip();
    let mut p = symmetrize(n, &cond_cols, &cond_vals);
    p.sigmas = Some(sigmas);
    Ok(p)
}

/// Dense single-bandwidth distribution
/// `p_ij = exp(-|x_i - x_j|^2 / 2 sigma^2) / sum_{k != l} exp(...)`.
pub fn build_affinities_global(data: &Dataset, sigma: f64) -> Result<SparseAffinities> {
    let n = data.n();
    if n > MAX_DENSE_N {
        return Err(Error::invalid(format!(
            "global-sigma mode is dense; n={n} exceeds {MAX_DENSE_N}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let pts = Points::new(data.as_slice(), data.d());
    let sq: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| j != i).map(|j| pts.sq_dist(i, j)).collect())
        .collect();
    // Shift by the smallest distance for stability; cancels in the ratio.
    let min = sq.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let two_s2 = 2.0 * sigma * sigma;
    let mut row_ptr = vec![0];
    let mut cols = Vec::with_capacity(n * (n - 1));
    let mut vals = Vec::with_capacity(n * (n - 1));
    for (i, row) in sq.iter().enumerate() {
        for (jj, &s) in row.iter().enumerate() {
            let j = if jj < i { jj } else { jj + 1 };
            cols.push(j as u32);
            vals.push((-(s - min) / two_s2).exp());
        }
        row_ptr.push(cols.len());
    }
    let mut p = SparseAffinities {
        row_ptr,
        cols,
        vals,
        sigmas: None,
    };
    let total = p.total();
    if !(total > 0.0) {
        return Err(Error::Numerical("all global-sigma affinities underflowed".into()));
    }
    p.vals.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}
