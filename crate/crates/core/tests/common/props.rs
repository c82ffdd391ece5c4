//! Property checks shared by the proptest suites and the acceptance run.
#![allow(dead_code)]

use ctsne_core::affinity::build_affinities_from_points;
use ctsne_core::bh::{CellId, Criterion, LabelQuadTree};
use ctsne_core::evaluation::{laplacian_score, KnnGraph};
use ctsne_core::exact::{conditional_r, q_matrix_stats};
use ctsne_core::{EmbeddingMatrix, LabelVector, PriorSpec};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

pub fn labels_strategy(n: usize, max_classes: usize) -> impl Strategy<Value = LabelVector> {
    proptest::collection::vec(0..max_classes, n).prop_map(|c| LabelVector::from_codes(&c).unwrap())
}

/// Points with coordinates in `[-range, range]`, optionally snapped to a
/// coarse grid so duplicates occur.
pub fn points_strategy(n: std::ops::Range<usize>, dim: usize, range: f64) -> impl Strategy<Value = Array2<f64>> {
    (n, any::<bool>()).prop_flat_map(move |(n, snap)| {
        proptest::collection::vec(-range..range, n * dim).prop_map(move |v| {
            let v = if snap { v.into_iter().map(|x| x.round()).collect() } else { v };
            Array2::from_shape_vec((n, dim), v).unwrap()
        })
    })
}

pub fn embedding_with_labels(n: std::ops::Range<usize>, classes: usize) -> impl Strategy<Value = (EmbeddingMatrix, LabelVector)> {
    points_strategy(n, 2, 5.0).prop_flat_map(move |pts| {
        let n = pts.nrows();
        labels_strategy(n, classes).prop_map(move |l| (EmbeddingMatrix::new(pts.clone()).unwrap(), l))
    })
}

pub fn r_sums_to_one(y: &EmbeddingMatrix, labels: &LabelVector, beta: f64) -> Result<(), TestCaseError> {
    let Ok(spec) = PriorSpec::alpha_from_beta(labels.clone(), beta) else {
        return Ok(());
    };
    let stats = q_matrix_stats(y, &spec).unwrap();
    let n = y.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += conditional_r(&stats, &spec, i, j).unwrap();
            }
        }
    }
    prop_assert!((total - 1.0).abs() < 1e-10, "sum r = {total}");
    Ok(())
}

pub fn normalization_residual(labels: &LabelVector, beta: f64) -> Result<(), TestCaseError> {
    match PriorSpec::alpha_from_beta(labels.clone(), beta) {
        Ok(spec) => {
            prop_assert!(spec.normalization_residual() < 1e-12);
            prop_assert!(spec.alpha_prime() >= 1.0 - 1e-12);
            if beta < 1.0 && spec.same_pair_fraction() < 1.0 {
                prop_assert!(spec.alpha_prime() > 1.0);
            }
        }
        Err(_) => prop_assert!(labels.class_sizes().iter().all(|&c| c == 1)),
    }
    Ok(())
}

pub fn quadtree_conservation(y: &EmbeddingMatrix, labels: &LabelVector, theta: f64) -> Result<(), TestCaseError> {
    let tree = LabelQuadTree::build(y, labels).unwrap();
    let n = y.n();
    let mut seen = vec![0usize; n];
    let mut stack = vec![tree.root()];
    let root_hist: Vec<usize> = tree.histogram(tree.root()).iter().map(|&c| c as usize).collect();
    prop_assert_eq!(&root_hist[..labels.num_classes()], labels.class_sizes());
    while let Some(c) = stack.pop() {
        let hist = tree.histogram(c);
        prop_assert_eq!(hist.iter().map(|&h| h as usize).sum::<usize>(), tree.count(c));
        if tree.is_leaf(c) {
            for &i in tree.points(c) {
                seen[i as usize] += 1;
            }
            continue;
        }
        let kids: Vec<CellId> = tree.children(c).collect();
        let mut sum = vec![0u32; hist.len()];
        let mut com = [0.0; 2];
        for &k in &kids {
            for (s, h) in sum.iter_mut().zip(tree.histogram(k)) {
                *s += h;
            }
            let m = tree.count(k) as f64;
            com[0] += m * tree.center_of_mass(k)[0];
            com[1] += m * tree.center_of_mass(k)[1];
        }
        prop_assert_eq!(&sum[..], hist);
        let m = tree.count(c) as f64;
        let own = tree.center_of_mass(c);
        for a in 0..2 {
            prop_assert!((com[a] / m - own[a]).abs() <= 1e-9 * (1.0 + own[a].abs()));
        }
        stack.extend(kids);
    }
    prop_assert!(seen.iter().all(|&s| s == 1), "every point in exactly one leaf");
    for i in 0..n {
        let f = tree.point_forces(i, 2.0, 0.5, theta, Criterion::Standard);
        prop_assert_eq!(f.visited, n - 1);
    }
    Ok(())
}

pub fn laplacian_hand_cases() -> Result<(), TestCaseError> {
    let cycle = KnnGraph::from_edges(4, (0..4).map(|i| (i, (i + 1) % 4))).unwrap();
    prop_assert_eq!(laplacian_score(&cycle, &LabelVector::constant(4)).unwrap(), 0.0);
    let alt = LabelVector::from_codes(&[0, 1, 0, 1]).unwrap();
    prop_assert!((laplacian_score(&cycle, &alt).unwrap() - 2.0).abs() < 1e-12);
    let two = KnnGraph::from_edges(8, (0..4).flat_map(|i| [(i, (i + 1) % 4), (4 + i, 4 + (i + 1) % 4)])).unwrap();
    let comp = LabelVector::from_codes(&[0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
    prop_assert_eq!(laplacian_score(&two, &comp).unwrap(), 0.0);
    Ok(())
}

/// Constant labels score 0 and re-coding labels changes nothing.
pub fn laplacian_graph_properties(edges: &[(usize, usize)], n: usize, labels: &LabelVector) -> Result<(), TestCaseError> {
    // A cycle guarantees no isolated node.
    let all = edges.iter().copied().chain((0..n).map(|i| (i, (i + 1) % n))).filter(|(a, b)| a != b);
    let g = KnnGraph::from_edges(n, all).unwrap();
    prop_assert_eq!(laplacian_score(&g, &LabelVector::constant(n)).unwrap(), 0.0);
    let s = laplacian_score(&g, labels).unwrap();
    prop_assert!(s >= 0.0);
    let k = labels.num_classes();
    let permuted: Vec<usize> = labels.labels().iter().map(|&l| (l + 1) % k).collect();
    let s2 = laplacian_score(&g, &LabelVector::from_codes(&permuted).unwrap()).unwrap();
    prop_assert!((s - s2).abs() <= 1e-12 * (1.0 + s));
    Ok(())
}

pub fn affinity_symmetry(x: &Array2<f64>, perplexity: f64) -> Result<(), TestCaseError> {
    let p = build_affinities_from_points(x.view(), perplexity).unwrap();
    prop_assert!((p.total() - 1.0).abs() < 1e-12, "total {}", p.total());
    for (i, j, v) in p.iter() {
        prop_assert!(v >= 0.0);
        prop_assert_eq!(p.get(j, i), Some(v));
    }
    Ok(())
}
