mod common;

use ctsne_core::baseline_cca::{correlation, fit_cca, mincorr_project, nullspace_project, NullspaceOptions};
use ctsne_core::{Dataset, LabelVector};
use ndarray::{concatenate, Array2, Axis};

fn sign_labels(x: &Array2<f64>, col: usize) -> LabelVector {
    let codes: Vec<usize> = x.column(col).iter().map(|&v| usize::from(v > 0.0)).collect();
    LabelVector::from_codes(&codes).unwrap()
}

/// Gaussian noise, except attribute 0 which is bimodal (`+-2` plus noise).
fn bimodal_first(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut x = common::gaussian_matrix(&mut common::rng(seed), n, d, 1.0);
    for i in 0..n {
        x[[i, 0]] = 0.5 * x[[i, 0]] + if i % 2 == 0 { 2.0 } else { -2.0 };
    }
    x
}

fn label_indicator(labels: &LabelVector) -> Vec<f64> {
    labels.labels().iter().map(|&l| l as f64).collect()
}

#[test]
fn sign_of_first_attribute_is_found() {
    let x = bimodal_first(51, 1000, 5);
    let labels = sign_labels(&x, 0);
    let model = fit_cca(&Dataset::from_matrix(x).unwrap(), &labels).unwrap();
    assert!(model.correlations()[0] > 0.9);
    let a = model.direction(0);
    let dominant = (0..5).max_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs())).unwrap();
    assert_eq!(dominant, 0);
}

#[test]
fn random_labels_have_weak_correlations() {
    let mut r = common::rng(52);
    let x = common::gaussian_matrix(&mut r, 1000, 5, 1.0);
    let labels = common::random_labels(&mut r, 1000, 4);
    let model = fit_cca(&Dataset::from_matrix(x).unwrap(), &labels).unwrap();
    assert!(model.correlations().iter().all(|&c| c < 0.2), "{:?}", model.correlations());
}

#[test]
fn duplicated_attribute_leaves_correlations_unchanged() {
    let mut r = common::rng(53);
    let x = common::gaussian_matrix(&mut r, 1000, 4, 1.0);
    let labels = sign_labels(&x, 0);
    let base = fit_cca(&Dataset::from_matrix(x.clone()).unwrap(), &labels).unwrap();
    let widened = concatenate![Axis(1), x, x.column(0).insert_axis(Axis(1))];
    let dup = fit_cca(&Dataset::from_matrix(widened).unwrap(), &labels).unwrap();
    for (a, b) in base.correlations().iter().zip(dup.correlations()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn nullspace_removes_label_correlation() {
    let x = common::gaussian_matrix(&mut common::rng(54), 1000, 5, 1.0);
    let labels = sign_labels(&x, 0);
    let data = Dataset::from_matrix(x).unwrap();
    let model = fit_cca(&data, &labels).unwrap();
    let projected = nullspace_project(&data, &model, NullspaceOptions { keep: None, max_directions: None }).unwrap();
    assert_eq!(projected.d(), 4);
    let y = label_indicator(&labels);
    for c in projected.points().columns() {
        assert!(correlation(&c.to_vec(), &y).abs() < 0.1);
    }
}

#[test]
fn mincorr_output_is_decorrelated() {
    // Labels depend on attributes 0 and 1; the remaining three are noise.
    let x = common::gaussian_matrix(&mut common::rng(55), 1000, 5, 1.0);
    let codes: Vec<usize> = (0..1000).map(|i| usize::from(x[[i, 0]] + 0.5 * x[[i, 1]] > 0.0)).collect();
    let labels = LabelVector::from_codes(&codes).unwrap();
    let data = Dataset::from_matrix(x).unwrap();
    let model = fit_cca(&data, &labels).unwrap();
    let out = mincorr_project(&data, &model).unwrap();
    assert_eq!(out.d(), 2);
    let y = label_indicator(&labels);
    for c in out.points().columns() {
        assert!(correlation(&c.to_vec(), &y).abs() < 0.15);
    }
    let again = mincorr_project(&data, &fit_cca(&data, &labels).unwrap()).unwrap();
    assert_eq!(out.as_slice(), again.as_slice());
}

#[test]
fn directions_beyond_rank_have_zero_correlation() {
    let mut r = common::rng(56);
    let x = common::gaussian_matrix(&mut r, 500, 5, 1.0);
    let labels = common::random_labels(&mut r, 500, 3);
    let model = fit_cca(&Dataset::from_matrix(x).unwrap(), &labels).unwrap();
    assert_eq!(model.num_components(), 2);
    assert_eq!(model.all_correlations().len(), 5);
    assert!(model.all_correlations()[2..].iter().all(|&c| c.abs() < 1e-8));
}
