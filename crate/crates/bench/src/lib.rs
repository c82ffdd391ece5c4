//! Fixtures shared by the benchmarks.

use ctsne_core::synth::gen_synthetic10_n;
use ctsne_core::{build_affinities, Dataset, EmbeddingMatrix, LabelVector, PriorSpec, SparseAffinities};
use ndarray::Array2;

pub struct Fixture {
    pub data: Dataset,
    pub labels: LabelVector,
    pub p: SparseAffinities,
    pub spec: PriorSpec,
    pub y: EmbeddingMatrix,
}

/// A spread-out 2-d layout with one ring sector per label, so the tree has
/// realistic depth. Deterministic and RNG-free.
pub fn layout(labels: &LabelVector) -> EmbeddingMatrix {
    let n = labels.len();
    let l = labels.num_classes() as f64;
    let coords = Array2::from_shape_fn((n, 2), |(i, a)| {
        let angle = std::f64::consts::TAU * labels.get(i) as f64 / l;
        let jitter = ((i as f64 * 12.9898 + a as f64 * 78.233).sin() * 43758.5453).fract();
        let base = if a == 0 { angle.cos() } else { angle.sin() };
        30.0 * base + 6.0 * jitter
    });
    EmbeddingMatrix::new(coords).expect("finite layout")
}

pub fn fixture(n: usize, beta_prime: f64) -> Fixture {
    let (data, labels, _) = gen_synthetic10_n(n, 0).expect("synthetic data");
    let p = build_affinities(&data, 30.0).expect("affinities");
    let spec = PriorSpec::alpha_from_beta(labels.clone(), beta_prime).expect("prior");
    let y = layout(&labels);
    Fixture { data, labels, p, spec, y }
}
