//! Test helpers: random instances and brute-force reference computations
//! written independently of the library kernels.
#![allow(dead_code)]

use ctsne_core::affinity::build_affinities_from_points;
use ctsne_core::{EmbeddingMatrix, LabelVector, PriorSpec, SparseAffinities};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> LabelVector {
    loop {
        let codes: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let l = LabelVector::from_codes(&codes).unwrap();
        if l.class_sizes().iter().any(|&c| c >= 2) {
            return l;
        }
    }
}

/// Random affinities (from 5-d Gaussian points), 2-d embedding, labels.
pub struct Instance {
    pub p: SparseAffinities,
    pub y: EmbeddingMatrix,
    pub spec: PriorSpec,
}

pub fn random_instance(seed: u64, n: usize, classes: usize, beta_prime: f64) -> Instance {
    let mut r = rng(seed);
    let x = gaussian_matrix(&mut r, n, 5, 1.0);
    let perplexity = (n as f64 / 6.0).clamp(2.0, 30.0);
    let p = build_affinities_from_points(x.view(), perplexity).unwrap();
    let y = EmbeddingMatrix::new(gaussian_matrix(&mut r, n, 2, 1.0)).unwrap();
    let labels = random_labels(&mut r, n, classes);
    let spec = PriorSpec::alpha_from_beta(labels, beta_prime).unwrap();
    Instance { p, y, spec }
}

pub fn dense_p(p: &SparseAffinities) -> Array2<f64> {
    let mut m = Array2::zeros((p.n(), p.n()));
    for (i, j, v) in p.iter() {
        m[[i, j]] = v;
    }
    m
}

fn kernel(y: &EmbeddingMatrix, i: usize, j: usize) -> f64 {
    let c = y.coords();
    let d2: f64 = (0..y.dim()).map(|a| (c[[i, a]] - c[[j, a]]).powi(2)).sum();
    1.0 / (1.0 + d2)
}

fn pair_weight(spec: &PriorSpec, i: usize, j: usize) -> f64 {
    if spec.labels().get(i) == spec.labels().get(j) {
        spec.alpha_prime()
    } else {
        spec.beta_prime()
    }
}

/// `r_ij` straight from its definition, as a dense matrix.
pub fn oracle_r(y: &EmbeddingMatrix, spec: &PriorSpec) -> Array2<f64> {
    let n = y.n();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += kernel(y, i, j);
            }
        }
    }
    let mut o = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                o += pair_weight(spec, i, j) * kernel(y, i, j) / z;
            }
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            pair_weight(spec, i, j) * kernel(y, i, j) / z / o
        }
    })
}

/// `sum p log(p / r)` over stored entries.
pub fn oracle_objective(p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec) -> f64 {
    let r = oracle_r(y, spec);
    p.iter()
        .filter(|&(_, _, v)| v > 0.0)
        .map(|(i, j, v)| v * (v / r[[i, j]]).ln())
        .sum()
}

/// Plain t-SNE `KL(p || q)`.
pub fn tsne_objective(p: &SparseAffinities, y: &EmbeddingMatrix) -> f64 {
    let n = y.n();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += kernel(y, i, j);
            }
        }
    }
    p.iter()
        .filter(|&(_, _, v)| v > 0.0)
        .map(|(i, j, v)| v * (v / (kernel(y, i, j) / z)).ln())
        .sum()
}

/// Plain t-SNE gradient `4 sum_j (p_ij - q_ij) u_ij (y_i - y_j)`.
pub fn tsne_gradient(p: &SparseAffinities, y: &EmbeddingMatrix) -> Array2<f64> {
    let n = y.n();
    let dp = dense_p(p);
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += kernel(y, i, j);
            }
        }
    }
    let c = y.coords();
    let mut g = Array2::zeros((n, y.dim()));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let u = kernel(y, i, j);
            let f = 4.0 * (dp[[i, j]] - u / z) * u;
            for a in 0..y.dim() {
                g[[i, a]] += f * (c[[i, a]] - c[[j, a]]);
            }
        }
    }
    g
}

/// Central finite differences of `f` at every coordinate of `y`.
pub fn finite_difference(y: &EmbeddingMatrix, h: f64, f: impl Fn(&EmbeddingMatrix) -> f64) -> Array2<f64> {
    let base = y.coords().to_owned();
    Array2::from_shape_fn(base.dim(), |(i, a)| {
        let mut plus = base.clone();
        plus[[i, a]] += h;
        let mut minus = base.clone();
        minus[[i, a]] -= h;
        let fp = f(&EmbeddingMatrix::new(plus).unwrap());
        let fm = f(&EmbeddingMatrix::new(minus).unwrap());
        (fp - fm) / (2.0 * h)
    })
}

/// Per-coordinate `|a - b| / max(|a|, |b|, floor)` with
/// `floor = 1e-3 * max |b|`; the maximum over coordinates.
pub fn max_relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Brute-force kNN: indices sorted by `(distance, index)`.
pub fn brute_knn(x: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let s: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                    (s, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Shannon entropy in bits.
pub fn entropy_bits(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>()
}

/// Stand-in for a converged 2-d embedding: one blob per class of `coarse`,
/// sub-blobs per class of `fine`, unit noise.
pub fn clustered_layout(seed: u64, coarse: &LabelVector, fine: &LabelVector) -> EmbeddingMatrix {
    let mut r = rng(seed);
    let n = coarse.len();
    let lc = coarse.num_classes() as f64;
    let lf = fine.num_classes() as f64;
    let mut coords = Array2::zeros((n, 2));
    for i in 0..n {
        let a = std::f64::consts::TAU * coarse.get(i) as f64 / lc;
        let b = std::f64::consts::TAU * fine.get(i) as f64 / lf;
        let nx: f64 = StandardNormal.sample(&mut r);
        let ny: f64 = StandardNormal.sample(&mut r);
        coords[[i, 0]] = 40.0 * a.cos() + 8.0 * b.cos() + nx;
        coords[[i, 1]] = 40.0 * a.sin() + 8.0 * b.sin() + ny;
    }
    EmbeddingMatrix::new(coords).unwrap()
}
