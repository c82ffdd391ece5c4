//! CCA baselines for removing label structure linearly before a plain
//! t-SNE run.
//!
//! CCA is solved between the centered data and a one-hot label view (last
//! column dropped), both with a `1e-6` ridge: whiten the data covariance,
//! then eigendecompose `M M'` with `M = Cxx^{-1/2} Cxy Cyy^{-1/2}`. The
//! eigenvectors give a complete basis of data directions, orthonormal under
//! `Cxx` and ordered by canonical correlation. Directions past
//! `min(d, L - 1)` have correlation zero.
//!
//! * [`nullspace_project`] removes the top directions and keeps the
//!   `Cxx`-orthogonal remainder.
//! * [`mincorr_project`] projects onto the two least correlated directions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelVector};
use crate::error::{Error, Result};

pub const RIDGE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct CcaModel {
    mean: DVector<f64>,
    /// Column `k` is the `k`-th data direction.
    directions: DMatrix<f64>,
    correlations: Vec<f64>,
    num_components: usize,
    cxx: DMatrix<f64>,
}

impl CcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of genuine canonical pairs, `min(d, L - 1)`.
    pub fn num_components(&self) -> usize {
        self.num_components
    }

    /// Correlations of the genuine components, descending.
    pub fn correlations(&self) -> &[f64] {
        &self.correlations[..self.num_components]
    }

    /// Correlations of the full basis (zeros past `num_components`).
    pub fn all_correlations(&self) -> &[f64] {
        &self.correlations
    }

    pub fn direction(&self, k: usize) -> Vec<f64> {
        self.directions.column(k).iter().copied().collect()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Ridge-regularized data covariance.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cxx
    }
}

fn centered_by(data: &Dataset, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut x = DMatrix::from_row_slice(data.n(), data.d(), data.as_slice());
    for (j, mut c) in x.column_iter_mut().enumerate() {
        c.add_scalar_mut(-mean[j]);
    }
    x
}

fn centered(data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let (n, d) = (data.n(), data.d());
    let mut x = DMatrix::from_row_slice(n, d, data.as_slice());
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.sum() / n as f64));
    for (j, mut c) in x.column_iter_mut().enumerate() {
        c.add_scalar_mut(-mean[j]);
    }
    (x, mean)
}

fn covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * b / (a.nrows() as f64 - 1.0)
}

fn inv_sqrt(c: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(c.clone());
    let floor = 1e-12 * eig.eigenvalues.amax().max(1e-300);
    if eig.eigenvalues.iter().any(|&l| !l.is_finite() || l <= floor) {
        return Err(Error::Numerical(format!("{what} covariance is rank deficient beyond ridge repair")));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Eigenpairs sorted by descending eigenvalue, each vector signed so its
/// largest-magnitude entry is positive.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let dim = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut vecs = DMatrix::zeros(dim, dim);
    let mut vals = Vec::with_capacity(dim);
    for (k, &o) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(o).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            v.neg_mut();
        }
        vecs.set_column(k, &v);
        vals.push(eig.eigenvalues[o]);
    }
    (vals, vecs)
}

pub fn fit_cca(data: &Dataset, labels: &LabelVector) -> Result<CcaModel> {
    let (n, d) = (data.n(), data.d());
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} points", labels.len())));
    }
    if n <= d {
        return Err(Error::invalid(format!("CCA needs more points than attributes (n={n}, d={d})")));
    }
    let l = labels.num_classes();
    if l < 2 {
        return Err(Error::invalid("CCA needs at least two label classes"));
    }
    let (x, mean) = centered(data);
    let mut y = DMatrix::zeros(n, l - 1);
    for (i, &c) in labels.labels().iter().enumerate() {
        if c < l - 1 {
            y[(i, c)] = 1.0;
        }
    }
    for mut c in y.column_iter_mut() {
        let m = c.sum() / n as f64;
        c.add_scalar_mut(-m);
    }
    let cxx = covariance(&x, &x) + DMatrix::identity(d, d) * RIDGE;
    let cyy = covariance(&y, &y) + DMatrix::identity(l - 1, l - 1) * RIDGE;
    let cxy = covariance(&x, &y);
    let wx = inv_sqrt(&cxx, "data")?;
    let wy = inv_sqrt(&cyy, "label")?;
    let m = &wx * cxy * wy;
    let (vals, u) = sorted_eigen(&m * m.transpose());
    let num_components = d.min(l - 1);
    let correlations: Vec<f64> = vals
        .iter()
        .enumerate()
        .map(|(k, &v)| if k < num_components { v.max(0.0).sqrt().min(1.0) } else { 0.0 })
        .collect();
    if correlations.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("non-finite canonical correlation".into()));
    }
    Ok(CcaModel {
        mean,
        directions: wx * u,
        correlations,
        num_components,
        cxx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NullspaceOptions {
    /// Output dimensions (top variance of the remainder); `None` keeps all.
    pub keep: Option<usize>,
    /// Cap on removed directions; `None` removes every genuine component.
    pub max_directions: Option<usize>,
}

impl Default for NullspaceOptions {
    fn default() -> Self {
        Self {
            keep: Some(2),
            max_directions: None,
        }
    }
}

/// Removes the top CCA directions: `X (I - A A' Cxx)` for the removed
/// directions `A`, then re-expresses the remainder in its principal axes.
pub fn nullspace_project(data: &Dataset, model: &CcaModel, opts: NullspaceOptions) -> Result<Dataset> {
    let d = data.d();
    if d != model.dim() {
        return Err(Error::Shape(format!("model fitted on {} attributes, data has {d}", model.dim())));
    }
    let removed = opts
        .max_directions
        .map_or(model.num_components, |m| m.min(model.num_components));
    let available = d - removed;
    if let Some(keep) = opts.keep {
        if keep < 2 {
            return Err(Error::invalid(format!("keep must be at least 2, got {keep}")));
        }
        if available < keep {
            return Err(Error::NullSpaceExhausted {
                available,
                requested: keep,
            });
        }
    } else if available == 0 {
        return Err(Error::NullSpaceExhausted { available, requested: 1 });
    }

    let x = centered_by(data, &model.mean);
    if removed == 0 && opts.keep.is_none() {
        return Dataset::new(matrix_to_array(&x), data.attribute_names().to_vec());
    }
    let a = model.directions.columns(0, removed).into_owned();
    let proj = DMatrix::identity(d, d) - &a * a.transpose() * &model.cxx;
    let rest = x * proj;
    let (_, axes) = sorted_eigen(covariance(&rest, &rest));
    let out_dim = opts.keep.unwrap_or(available);
    let out = rest * axes.columns(0, out_dim);
    let names = (1..=out_dim).map(|k| format!("null{k}")).collect();
    Dataset::new(matrix_to_array(&out), names)
}

/// Projects onto the two directions least correlated with the labels.
pub fn mincorr_project(data: &Dataset, model: &CcaModel) -> Result<Dataset> {
    let d = data.d();
    if d != model.dim() {
        return Err(Error::Shape(format!("model fitted on {} attributes, data has {d}", model.dim())));
    }
    if d < 2 {
        return Err(Error::invalid("min-correlation projection needs at least 2 directions"));
    }
    if model.num_components < 2 {
        log::warn!(
            "only {} canonical component(s); completing with covariance-orthogonal directions",
            model.num_components
        );
    }
    let x = centered_by(data, &model.mean);
    let out = x * model.directions.columns(d - 2, 2);
    Dataset::new(matrix_to_array(&out), vec!["mincorr1".into(), "mincorr2".into()])
}

fn matrix_to_array(m: &DMatrix<f64>) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Pearson correlation of two equally long samples (0 for constant input).
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
