//! Label priors.
//!
//! A prior is a label vector plus the normalized weights `alpha'` (same-label
//! pairs) and `beta'` (different-label pairs). They are tied by
//!
//! ```text
//! alpha' * s + beta' * (1 - s) = 1,   s = sum_l n_l (n_l - 1) / (n (n - 1))
//! ```
//!
//! so `beta'` is the only free knob and `alpha'` is derived from it.
//! `beta' = 1` gives `alpha' = 1`, which is plain t-SNE.

use serde::{Deserialize, Serialize};

use crate::data::LabelVector;
use crate::error::{Error, Result};

pub const DEFAULT_BETA_PRIME: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    labels: LabelVector,
    beta_prime: f64,
    alpha_prime: f64,
    same_pair_fraction: f64,
}

impl PriorSpec {
    /// Derives `alpha'` from `beta'` for the given labels.
    pub fn alpha_from_beta(labels: LabelVector, beta_prime: f64) -> Result<Self> {
        if !(beta_prime > 0.0 && beta_prime <= 1.0) {
            return Err(Error::invalid(format!("beta' must be in (0, 1], got {beta_prime}")));
        }
        if labels.is_empty() {
            return Err(Error::invalid("prior needs at least one label"));
        }
        let s = labels.same_pair_fraction();
        if s <= 0.0 {
            return Err(Error::VacuousPrior);
        }
        // Same as (1 - beta' (1 - s)) / s, but exact at beta' = 1 and s = 1.
        let alpha_prime = if s == 1.0 { 1.0 } else { (1.0 - beta_prime) / s + beta_prime };
        Ok(Self {
            labels,
            beta_prime,
            alpha_prime,
            same_pair_fraction: s,
        })
    }

    /// The unconditioned prior (one class, unit weights): plain t-SNE.
    pub fn unconditioned(n: usize) -> Self {
        Self {
            labels: LabelVector::constant(n),
            beta_prime: 1.0,
            alpha_prime: 1.0,
            same_pair_fraction: 1.0,
        }
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn alpha_prime(&self) -> f64 {
        self.alpha_prime
    }

    pub fn beta_prime(&self) -> f64 {
        self.beta_prime
    }

    pub fn same_pair_fraction(&self) -> f64 {
        self.same_pair_fraction
    }

    /// `|alpha' s + beta' (1 - s) - 1|`.
    pub fn normalization_residual(&self) -> f64 {
        let s = self.same_pair_fraction;
        (self.alpha_prime * s + self.beta_prime * (1.0 - s) - 1.0).abs()
    }

    /// Label agreement indicator; `i == j` is not a pair.
    pub fn delta(&self, i: usize, j: usize) -> Result<bool> {
        if i == j {
            return Err(Error::invalid(format!("delta({i}, {i}) is undefined")));
        }
        let n = self.n();
        if i >= n || j >= n {
            return Err(Error::invalid(format!("index out of range for n={n}")));
        }
        Ok(self.labels.get(i) == self.labels.get(j))
    }

    /// Pair weight `alpha'` or `beta'`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if self.labels.get(i) == self.labels.get(j) {
            self.alpha_prime
        } else {
            self.beta_prime
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_is_vacuous_conditioning() {
        for b in [0.01, 0.5, 1.0] {
            let p = PriorSpec::alpha_from_beta(LabelVector::constant(10), b).unwrap();
            assert_eq!(p.alpha_prime(), 1.0);
        }
    }

    #[test]
    fn unit_beta_recovers_tsne() {
        let l = LabelVector::from_codes(&[0, 1, 1, 2, 0]).unwrap();
        let p = PriorSpec::alpha_from_beta(l, 1.0).unwrap();
        assert!((p.alpha_prime() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_pairs_example() {
        // n = 4, classes {2, 2}: s = (2 + 2) / 12 = 1/3;
        // alpha' = (1 - 0.01 * 2/3) / (1/3) = 3 - 0.02 = 2.98.
        let l = LabelVector::from_codes(&[0, 0, 1, 1]).unwrap();
        let p = PriorSpec::alpha_from_beta(l, 0.01).unwrap();
        assert!((p.same_pair_fraction() - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.alpha_prime() - 2.98).abs() < 1e-12);
        assert!(p.normalization_residual() < 1e-12);
    }

    #[test]
    fn singletons_are_rejected() {
        let l = LabelVector::from_codes(&[0, 1, 2]).unwrap();
        assert!(matches!(PriorSpec::alpha_from_beta(l, 0.5), Err(Error::VacuousPrior)));
    }

    #[test]
    fn beta_range_enforced() {
        let l = LabelVector::constant(3);
        assert!(PriorSpec::alpha_from_beta(l.clone(), 0.0).is_err());
        assert!(PriorSpec::alpha_from_beta(l.clone(), 1.5).is_err());
        assert!(PriorSpec::alpha_from_beta(l, f64::NAN).is_err());
    }

    #[test]
    fn delta_definition() {
        let l = LabelVector::from_codes(&[0, 0, 1]).unwrap();
        let p = PriorSpec::alpha_from_beta(l, 0.5).unwrap();
        assert!(p.delta(0, 1).unwrap());
        assert!(!p.delta(0, 2).unwrap());
        assert!(p.delta(1, 1).is_err());
    }
}
