//! Exact O(n^2) objective and gradient.
//!
//! With Student-t kernels `u_ij = 1 / (1 + |y_i - y_j|^2)`, `Z = sum u`,
//! label weights `w_ij` (`alpha'` for same-label pairs, `beta'` otherwise)
//! and `W = sum w u`, the conditioned distribution is
//! `r_ij = w_ij u_ij / W` and the objective is `KL(p || r)`. Its gradient is
//!
//! ```text
//! dC/dy_i = 4 sum_j (p_ij - w_ij q_ij / O) u_ij (y_i - y_j)
//!         = 4 (sum_j p_ij u_ij (y_i - y_j) - (1 / W) sum_j w_ij u_ij^2 (y_i - y_j))
//! ```
//!
//! with `q = u / Z` and `O = W / Z`. Everything here streams over pairs and
//! needs only O(n) memory apart from [`q_matrix_stats`], which materializes
//! the kernel matrix for inspection on small inputs.

use ndarray::Array2;
use rayon::prelude::*;

use crate::affinity::SparseAffinities;
use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::prior::PriorSpec;

/// Kernel matrix and global sums for one embedding.
#[derive(Debug, Clone)]
pub struct QStats {
    /// `u_ij`, zero on the diagonal.
    pub u: Array2<f64>,
    pub z: f64,
    pub w: f64,
}

impl QStats {
    pub fn q(&self, i: usize, j: usize) -> f64 {
        self.u[[i, j]] / self.z
    }

    /// `O = alpha' sum_{same} q + beta' sum_{diff} q`.
    pub fn o(&self) -> f64 {
        self.w / self.z
    }
}

/// Exact `Z` and `W`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalSums {
    pub z: f64,
    pub w: f64,
}

impl GlobalSums {
    pub fn o(&self) -> f64 {
        self.w / self.z
    }
}

pub(crate) fn check_consistent(p: Option<&SparseAffinities>, y: &EmbeddingMatrix, spec: &PriorSpec) -> Result<()> {
    let n = y.n();
    if n < 2 {
        return Err(Error::invalid("need at least 2 points"));
    }
    if spec.n() != n {
        return Err(Error::Shape(format!("prior has {} labels for {n} points", spec.n())));
    }
    if let Some(p) = p {
        if p.n() != n {
            return Err(Error::Shape(format!("affinities have {} rows for {n} points", p.n())));
        }
    }
    if y.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("embedding contains non-finite coordinates"));
    }
    Ok(())
}

pub fn q_matrix_stats(y: &EmbeddingMatrix, spec: &PriorSpec) -> Result<QStats> {
    check_consistent(None, y, spec)?;
    let n = y.n();
    let coords = y.coords();
    let mut u = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d2: f64 = coords
                    .row(i)
                    .iter()
                    .zip(coords.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                u[[i, j]] = 1.0 / (1.0 + d2);
            }
        }
    }
    let mut z = 0.0;
    let mut w = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += u[[i, j]];
                w += spec.weight(i, j) * u[[i, j]];
            }
        }
    }
    Ok(QStats { u, z, w })
}

/// `r_ij = w_ij q_ij / O`.
pub fn conditional_r(stats: &QStats, spec: &PriorSpec, i: usize, j: usize) -> Result<f64> {
    if i == j {
        return Err(Error::invalid(format!("r({i}, {i}) is undefined")));
    }
    Ok(spec.weight(i, j) * stats.q(i, j) / stats.o())
}

/// Per-row partial sums. `rep` is `sum_j w_ij u_ij^2 (y_i - y_j)`.
struct RowSums {
    z: f64,
    w: f64,
    rep: [f64; 2],
}

fn row_sums_2d(y: &[f64], labels: &[usize], alpha: f64, beta: f64, i: usize) -> RowSums {
    let (xi, yi) = (y[2 * i], y[2 * i + 1]);
    let li = labels[i];
    let mut z = 0.0;
    let mut w = 0.0;
    let mut rx = 0.0;
    let mut ry = 0.0;
    for (j, (pt, &lj)) in y.chunks_exact(2).zip(labels).enumerate() {
        if j == i {
            continue;
        }
        let dx = xi - pt[0];
        let dy = yi - pt[1];
        let u = 1.0 / (1.0 + dx * dx + dy * dy);
        let wt = if lj == li { alpha } else { beta };
        let wu = wt * u;
        z += u;
        w += wu;
        let f = wu * u;
        rx += f * dx;
        ry += f * dy;
    }
    RowSums { z, w, rep: [rx, ry] }
}

fn row_sums_nd(y: &[f64], dim: usize, labels: &[usize], alpha: f64, beta: f64, i: usize, rep: &mut [f64]) -> (f64, f64) {
    let yi = &y[i * dim..(i + 1) * dim];
    let li = labels[i];
    let mut z = 0.0;
    let mut w = 0.0;
    rep.iter_mut().for_each(|r| *r = 0.0);
    for (j, (pt, &lj)) in y.chunks_exact(dim).zip(labels).enumerate() {
        if j == i {
            continue;
        }
        let d2: f64 = yi.iter().zip(pt).map(|(a, b)| (a - b) * (a - b)).sum();
        let u = 1.0 / (1.0 + d2);
        let wt = if lj == li { alpha } else { beta };
        let wu = wt * u;
        z += u;
        w += wu;
        let f = wu * u;
        for ((r, a), b) in rep.iter_mut().zip(yi).zip(pt) {
            *r += f * (a - b);
        }
    }
    (z, w)
}

/// Row partials for every point: `(z_i, w_i)` and the repulsion vectors.
fn all_row_sums(y: &EmbeddingMatrix, spec: &PriorSpec) -> (Vec<(f64, f64)>, Vec<f64>) {
    let n = y.n();
    let dim = y.dim();
    let data = y.as_slice();
    let labels = spec.labels().labels();
    let (a, b) = (spec.alpha_prime(), spec.beta_prime());
    let mut rep = vec![0.0; n * dim];
    let sums: Vec<(f64, f64)> = if dim == 2 {
        rep.par_chunks_mut(2)
            .enumerate()
            .map(|(i, r)| {
                let s = row_sums_2d(data, labels, a, b, i);
                r.copy_from_slice(&s.rep);
                (s.z, s.w)
            })
            .collect()
    } else {
        rep.par_chunks_mut(dim)
            .enumerate()
            .map(|(i, r)| row_sums_nd(data, dim, labels, a, b, i, r))
            .collect()
    };
    (sums, rep)
}

fn reduce(sums: &[(f64, f64)]) -> GlobalSums {
    // Sequential in index order: identical results for any thread count.
    let mut z = 0.0;
    let mut w = 0.0;
    for &(zi, wi) in sums {
        z += zi;
        w += wi;
    }
    GlobalSums { z, w }
}

pub fn global_sums(y: &EmbeddingMatrix, spec: &PriorSpec) -> Result<GlobalSums> {
    check_consistent(None, y, spec)?;
    Ok(reduce(&all_row_sums(y, spec).0))
}

/// The three pieces of `KL(p || r)`:
/// `KL(p || q) + log O - sum_{same} p log alpha' - sum_{diff} p log beta'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub kl_pq: f64,
    /// `(sum p) log O`; the only term that moves with the prior weights and Y.
    pub log_normalizer: f64,
    /// `-sum_{same} p log alpha' - sum_{diff} p log beta'`, constant in Y.
    pub label_constant: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.kl_pq + self.log_normalizer + self.label_constant
    }
}

/// Objective pieces given global sums (exact or tree-approximated). Only
/// stored `p` entries enter the KL sum; `0 log 0 = 0`.
pub fn objective_parts(p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec, sums: GlobalSums) -> ObjectiveParts {
    let dim = y.dim();
    let data = y.as_slice();
    let labels = spec.labels().labels();
    let (ln_a, ln_b) = (spec.alpha_prime().ln(), spec.beta_prime().ln());
    let rows: Vec<(f64, f64, f64)> = (0..p.n())
        .into_par_iter()
        .map(|i| {
            let (cols, vals) = p.row(i);
            let yi = &data[i * dim..(i + 1) * dim];
            let mut kl = 0.0;
            let mut mass = 0.0;
            let mut label = 0.0;
            for (&j, &pij) in cols.iter().zip(vals) {
                if pij <= 0.0 {
                    continue;
                }
                let j = j as usize;
                let yj = &data[j * dim..(j + 1) * dim];
                let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                // log(p / q) = log p - log u + log Z; u = 1 / (1 + d2)
                kl += pij * (pij.ln() + d2.ln_1p());
                mass += pij;
                label -= pij * if labels[i] == labels[j] { ln_a } else { ln_b };
            }
            (kl, mass, label)
        })
        .collect();
    let (mut kl, mut mass, mut label) = (0.0, 0.0, 0.0);
    for (k, m, l) in rows {
        kl += k;
        mass += m;
        label += l;
    }
    ObjectiveParts {
        kl_pq: kl + mass * sums.z.ln(),
        log_normalizer: mass * sums.o().ln(),
        label_constant: label,
    }
}

pub fn ctsne_objective_parts(p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec) -> Result<ObjectiveParts> {
    check_consistent(Some(p), y, spec)?;
    let sums = global_sums(y, spec)?;
    Ok(objective_parts(p, y, spec, sums))
}

/// `KL(p || r)`.
pub fn ctsne_objective(p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec) -> Result<f64> {
    let v = ctsne_objective_parts(p, y, spec)?.total();
    if !v.is_finite() {
        return Err(Error::Numerical(format!("objective is {v}")));
    }
    Ok(v)
}

/// Gradient plus the global sums it was computed with.
#[derive(Debug, Clone)]
pub struct GradientEval {
    pub gradient: Array2<f64>,
    pub sums: GlobalSums,
}

/// `sum_j p_ij u_ij (y_i - y_j)` for every row, scaled by `exaggeration`.
pub(crate) fn attraction(p: &SparseAffinities, y: &EmbeddingMatrix, exaggeration: f64) -> Vec<f64> {
    let dim = y.dim();
    let data = y.as_slice();
    let mut out = vec![0.0; p.n() * dim];
    out.par_chunks_mut(dim).enumerate().for_each(|(i, acc)| {
        let (cols, vals) = p.row(i);
        let yi = &data[i * dim..(i + 1) * dim];
        for (&j, &pij) in cols.iter().zip(vals) {
            let yj = &data[j as usize * dim..(j as usize + 1) * dim];
            let d2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
            let f = exaggeration * pij / (1.0 + d2);
            for ((o, a), b) in acc.iter_mut().zip(yi).zip(yj) {
                *o += f * (a - b);
            }
        }
    });
    out
}

/// Combines attraction and repulsion into `4 (attr - rep / W)`.
pub(crate) fn assemble(n: usize, dim: usize, attr: &[f64], rep: &[f64], w: f64) -> Result<Array2<f64>> {
    let inv_w = 1.0 / w;
    let g: Vec<f64> = attr.iter().zip(rep).map(|(a, r)| 4.0 * (a - r * inv_w)).collect();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite gradient".into()));
    }
    Array2::from_shape_vec((n, dim), g).map_err(|e| Error::Shape(e.to_string()))
}

/// Exact gradient with the attractive term scaled by `exaggeration`
/// (1 for the true gradient).
pub fn gradient_eval(p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec, exaggeration: f64) -> Result<GradientEval> {
    check_consistent(Some(p), y, spec)?;
    let (row, rep) = all_row_sums(y, spec);
    let sums = reduce(&row);
    let attr = attraction(p, y, exaggeration);
    let gradient = assemble(y.n(), y.dim(), &attr, &rep, sums.w)?;
    Ok(GradientEval { gradient, sums })
}

pub fn ctsne_gradient(p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec) -> Result<Array2<f64>> {
    gradient_eval(p, y, spec, 1.0).map(|g| g.gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelVector;
    use ndarray::array;

    fn two_point_p() -> SparseAffinities {
        SparseAffinities::from_csr(vec![0, 1, 2], vec![1, 0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn two_points_q_is_half() {
        let y = EmbeddingMatrix::new(array![[0.3, -1.0], [2.0, 5.0]]).unwrap();
        let spec = PriorSpec::unconditioned(2);
        let s = q_matrix_stats(&y, &spec).unwrap();
        assert_eq!(s.q(0, 1), 0.5);
        assert_eq!(s.q(1, 0), 0.5);
        assert_eq!(s.o(), 1.0);
    }

    #[test]
    fn coincident_points_have_unit_kernel() {
        let y = EmbeddingMatrix::new(array![[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]]).unwrap();
        let s = q_matrix_stats(&y, &PriorSpec::unconditioned(3)).unwrap();
        assert_eq!(s.u[[0, 1]], 1.0);
        assert_eq!(s.u[[0, 0]], 0.0);
    }

    #[test]
    fn two_points_r_and_objective() {
        let y = EmbeddingMatrix::new(array![[0.0, 0.0], [1.0, 2.0]]).unwrap();
        let labels = LabelVector::from_codes(&[0, 0]).unwrap();
        let spec = PriorSpec::alpha_from_beta(labels, 0.3).unwrap();
        let s = q_matrix_stats(&y, &spec).unwrap();
        assert!((conditional_r(&s, &spec, 0, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(conditional_r(&s, &spec, 1, 1).is_err());
        let p = two_point_p();
        assert!(ctsne_objective(&p, &y, &spec).unwrap().abs() < 1e-15);
        let g = ctsne_gradient(&p, &y, &spec).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15), "{g:?}");
    }

    #[test]
    fn two_points_different_labels_stationary() {
        let y = EmbeddingMatrix::new(array![[0.0, 0.0], [-4.0, 2.0]]).unwrap();
        let spec = PriorSpec::unconditioned(2);
        let g = ctsne_gradient(&two_point_p(), &y, &spec).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let y = EmbeddingMatrix::new(array![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]).unwrap();
        assert!(ctsne_gradient(&two_point_p(), &y, &PriorSpec::unconditioned(3)).is_err());
        let y2 = EmbeddingMatrix::new(array![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert!(ctsne_gradient(&two_point_p(), &y2, &PriorSpec::unconditioned(3)).is_err());
    }

    #[test]
    fn nd_and_2d_kernels_agree() {
        let coords = array![[0.1, 0.2], [1.0, -0.5], [0.3, 0.9], [-1.2, 0.0]];
        let y = EmbeddingMatrix::new(coords.clone()).unwrap();
        let spec = PriorSpec::alpha_from_beta(LabelVector::from_codes(&[0, 1, 0, 1]).unwrap(), 0.2).unwrap();
        let (sums2, rep2) = all_row_sums(&y, &spec);
        let mut rep = vec![0.0; 2];
        for i in 0..4 {
            let (z, w) = row_sums_nd(y.as_slice(), 2, spec.labels().labels(), spec.alpha_prime(), spec.beta_prime(), i, &mut rep);
            assert!((z - sums2[i].0).abs() < 1e-15 && (w - sums2[i].1).abs() < 1e-15);
            assert!((rep[0] - rep2[2 * i]).abs() < 1e-15 && (rep[1] - rep2[2 * i + 1]).abs() < 1e-15);
        }
    }
}
