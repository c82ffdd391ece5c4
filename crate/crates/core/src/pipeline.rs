//! Dataset + labels + parameters -> embedding. Shared by the CLI and the
//! job server so both produce identical results for identical inputs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::affinity::{build_affinities, build_affinities_global, cache, SparseAffinities, DEFAULT_PERPLEXITY};
use crate::data::{Dataset, LabelVector};
use crate::error::{Error, Result};
use crate::optimizer::{run_with_observer, EmbeddingResult, OptimizerConfig, Progress};
use crate::prior::{PriorSpec, DEFAULT_BETA_PRIME};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedParams {
    pub perplexity: f64,
    /// Dense single-bandwidth affinities instead of perplexity calibration.
    pub global_sigma: Option<f64>,
    pub beta_prime: f64,
    pub optimizer: OptimizerConfig,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for EmbedParams {
    fn default() -> Self {
        Self {
            perplexity: DEFAULT_PERPLEXITY,
            global_sigma: None,
            beta_prime: DEFAULT_BETA_PRIME,
            optimizer: OptimizerConfig::default(),
            cache_dir: None,
        }
    }
}

impl EmbedParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_prime > 0.0 && self.beta_prime <= 1.0) {
            return Err(Error::invalid(format!("beta' must be in (0, 1], got {}", self.beta_prime)));
        }
        match self.global_sigma {
            Some(s) if !(s > 0.0 && s.is_finite()) => {
                return Err(Error::invalid(format!("sigma must be positive, got {s}")));
            }
            None if !(self.perplexity >= 2.0 && self.perplexity.is_finite()) => {
                return Err(Error::invalid(format!("perplexity must be >= 2, got {}", self.perplexity)));
            }
            _ => {}
        }
        self.optimizer.validate()
    }
}

pub fn affinities_for(data: &Dataset, params: &EmbedParams) -> Result<SparseAffinities> {
    if let Some(sigma) = params.global_sigma {
        return build_affinities_global(data, sigma);
    }
    match &params.cache_dir {
        Some(dir) => cache::build_cached(data, params.perplexity, dir).map(|(p, _)| p),
        None => build_affinities(data, params.perplexity),
    }
}

/// No labels means plain t-SNE (`alpha' = beta' = 1`).
pub fn prior_for(n: usize, labels: Option<&LabelVector>, beta_prime: f64) -> Result<PriorSpec> {
    match labels {
        None => Ok(PriorSpec::unconditioned(n)),
        Some(l) if l.len() != n => Err(Error::Shape(format!("{} labels for {n} points", l.len()))),
        Some(l) => PriorSpec::alpha_from_beta(l.clone(), beta_prime),
    }
}

pub fn embed(data: &Dataset, labels: Option<&LabelVector>, params: &EmbedParams) -> Result<EmbeddingResult> {
    embed_with_observer(data, labels, params, &mut |_| {})
}

pub fn embed_with_observer(
    data: &Dataset,
    labels: Option<&LabelVector>,
    params: &EmbedParams,
    observer: &mut dyn FnMut(&Progress<'_>),
) -> Result<EmbeddingResult> {
    params.validate()?;
    let spec = prior_for(data.n(), labels, params.beta_prime)?;
    let p = affinities_for(data, params)?;
    let mut result = run_with_observer(&p, &spec, &params.optimizer, observer)?;
    if params.global_sigma.is_some() {
        result.metadata.global_sigma = params.global_sigma;
    } else {
        result.metadata.perplexity = Some(params.perplexity);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::Engine;
    use crate::synth::gen_synthetic10_n;

    #[test]
    fn unlabeled_run_is_unconditioned() {
        let (data, _, _) = gen_synthetic10_n(80, 1).unwrap();
        let params = EmbedParams {
            perplexity: 5.0,
            optimizer: OptimizerConfig {
                iterations: 60,
                engine: Engine::Exact,
                ..OptimizerConfig::default()
            },
            ..EmbedParams::default()
        };
        let r = embed(&data, None, &params).unwrap();
        assert_eq!(r.metadata.alpha_prime, 1.0);
        assert_eq!(r.metadata.beta_prime, 1.0);
        assert_eq!(r.metadata.perplexity, Some(5.0));
        assert_eq!(r.embedding.n(), 80);
    }

    #[test]
    fn validation() {
        let mut p = EmbedParams {
            beta_prime: 1.5,
            ..EmbedParams::default()
        };
        assert!(p.validate().is_err());
        p.beta_prime = 0.5;
        p.perplexity = 1.0;
        assert!(p.validate().is_err());
        p.global_sigma = Some(1.0);
        assert!(p.validate().is_ok());
    }
}
