//! Gradient descent with momentum, per-coordinate gains, early exaggeration
//! and random restarts.
//!
//! Schedule (the usual t-SNE recipe): learning rate 200, momentum 0.5 then
//! 0.8 from iteration 250, `p` multiplied by 12 for the first 250
//! iterations. Gains grow by 0.2 when the gradient flips sign relative to
//! the velocity and shrink by 0.8 otherwise, floored at 0.01. `Y` is
//! re-centered after every step.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::affinity::SparseAffinities;
use crate::bh::{approx_gradient_eval, Criterion, DEFAULT_THETA};
use crate::data::{EmbeddingMatrix, RunMetadata, TracePoint};
use crate::error::{Error, Result};
use crate::exact::{check_consistent, global_sums, gradient_eval, objective_parts, GlobalSums, GradientEval};
use crate::prior::PriorSpec;
use crate::rng::{derive_seed, seeded};

pub const INIT_STD: f64 = 1e-4;
/// Up to this size the logged objective uses exact `Z` and `W` even when
/// the gradient is tree-approximated.
pub const EXACT_OBJECTIVE_MAX_N: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Engine {
    Exact,
    BarnesHut {
        theta: f64,
        #[serde(default)]
        criterion: Criterion,
    },
}

impl Default for Engine {
    fn default() -> Self {
        Engine::bh(DEFAULT_THETA)
    }
}

impl Engine {
    pub fn bh(theta: f64) -> Self {
        Engine::BarnesHut {
            theta,
            criterion: Criterion::Standard,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Engine::Exact => "exact",
            Engine::BarnesHut { .. } => "bh",
        }
    }

    pub fn theta(&self) -> Option<f64> {
        match *self {
            Engine::Exact => None,
            Engine::BarnesHut { theta, .. } => Some(theta),
        }
    }

    /// Gradient at `y` with `p` scaled by `exaggeration`.
    pub fn gradient(&self, p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec, exaggeration: f64) -> Result<GradientEval> {
        match *self {
            Engine::Exact => gradient_eval(p, y, spec, exaggeration),
            Engine::BarnesHut { theta, criterion } => approx_gradient_eval(p, y, spec, theta, criterion, exaggeration),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Engine {
    type Err = Error;

    /// `exact` or `bh` (default theta).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Engine::Exact),
            "bh" | "barnes-hut" => Ok(Engine::default()),
            other => Err(Error::invalid(format!("unknown engine {other:?} (exact|bh)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub engine: Engine,
    /// Stop once the gradient norm falls below this.
    pub min_grad_norm: Option<f64>,
    pub embedding_dim: usize,
    pub trace_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 200.0,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            restarts: 1,
            seed: 0,
            engine: Engine::default(),
            min_grad_norm: Some(1e-7),
            embedding_dim: 2,
            trace_every: 50,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        for m in [self.initial_momentum, self.final_momentum] {
            if !(0.0..1.0).contains(&m) {
                return bad(format!("momentum must be in [0, 1), got {m}"));
            }
        }
        if !(self.exaggeration > 0.0 && self.exaggeration.is_finite()) {
            return bad(format!("exaggeration must be positive, got {}", self.exaggeration));
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding dimension must be positive".into());
        }
        if self.trace_every == 0 {
            return bad("trace interval must be positive".into());
        }
        if let Some(g) = self.min_grad_norm {
            if !(g >= 0.0) {
                return bad(format!("gradient-norm threshold must be >= 0, got {g}"));
            }
        }
        if let Engine::BarnesHut { theta, .. } = self.engine {
            if !(theta >= 0.0) {
                return bad(format!("theta must be >= 0, got {theta}"));
            }
            if self.embedding_dim != 2 {
                return bad("the Barnes-Hut engine needs a 2-d embedding".into());
            }
        }
        Ok(())
    }
}

/// Rows i.i.d. `N(0, 1e-4^2)`.
pub fn init_embedding(n: usize, dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    if n < 2 {
        return Err(Error::invalid("need at least 2 points"));
    }
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let coords = Array2::from_shape_simple_fn((n, dim), || normal.sample(&mut rng));
    Ok(EmbeddingMatrix::from_raw(coords))
}

#[derive(Debug, Clone)]
pub struct EmbeddingResult {
    pub embedding: EmbeddingMatrix,
    pub metadata: RunMetadata,
}

/// Intermediate state handed to observers at every trace point.
#[derive(Debug)]
pub struct Progress<'a> {
    pub restart: usize,
    pub iteration: usize,
    pub objective: f64,
    pub embedding: &'a EmbeddingMatrix,
}

struct RestartOutcome {
    embedding: EmbeddingMatrix,
    objective: f64,
    trace: Vec<TracePoint>,
    iterations_run: usize,
}

fn recenter(y: &mut [f64], dim: usize) {
    let n = y.len() / dim;
    for a in 0..dim {
        let mean = y.iter().skip(a).step_by(dim).sum::<f64>() / n as f64;
        for v in y.iter_mut().skip(a).step_by(dim) {
            *v -= mean;
        }
    }
}

fn logged_objective(p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec, engine: &Engine, approx: GlobalSums) -> Result<f64> {
    let sums = if matches!(engine, Engine::Exact) || y.n() > EXACT_OBJECTIVE_MAX_N {
        approx
    } else {
        global_sums(y, spec)?
    };
    let v = objective_parts(p, y, spec, sums).total();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("objective is {v}")))
    }
}

/// Final objective at `y`, with exact sums when affordable.
pub fn final_objective(p: &SparseAffinities, y: &EmbeddingMatrix, spec: &PriorSpec, engine: &Engine) -> Result<f64> {
    let sums = if matches!(engine, Engine::Exact) || y.n() <= EXACT_OBJECTIVE_MAX_N {
        global_sums(y, spec)?
    } else {
        engine.gradient(p, y, spec, 1.0)?.sums
    };
    let v = objective_parts(p, y, spec, sums).total();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("objective is {v}")))
    }
}

fn run_restart(
    p: &SparseAffinities,
    spec: &PriorSpec,
    cfg: &OptimizerConfig,
    restart: usize,
    observer: &mut dyn FnMut(&Progress<'_>),
) -> Result<RestartOutcome> {
    let n = p.n();
    let dim = cfg.embedding_dim;
    let mut y = init_embedding(n, dim, derive_seed(cfg.seed, restart as u64))?;
    let mut vel = vec![0.0; n * dim];
    let mut gains = vec![1.0f64; n * dim];
    let mut trace = Vec::new();
    let mut iterations_run = 0;

    for t in 0..cfg.iterations {
        let exaggeration = if t < cfg.exaggeration_iters { cfg.exaggeration } else { 1.0 };
        let eval = cfg.engine.gradient(p, &y, spec, exaggeration)?;
        if t % cfg.trace_every == 0 {
            let objective = logged_objective(p, &y, spec, &cfg.engine, eval.sums)?;
            trace.push(TracePoint { iteration: t, objective });
            observer(&Progress {
                restart,
                iteration: t,
                objective,
                embedding: &y,
            });
        }
        let g = eval.gradient.as_slice().expect("standard layout");
        if let Some(threshold) = cfg.min_grad_norm {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < threshold {
                log::debug!("restart {restart}: gradient norm {norm:e} below threshold at iteration {t}");
                break;
            }
        }
        let momentum = if t < cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };
        let mut coords = y.into_inner();
        let ys = coords.as_slice_mut().expect("standard layout");
        for k in 0..ys.len() {
            gains[k] = if (g[k] > 0.0) != (vel[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            vel[k] = momentum * vel[k] - cfg.learning_rate * gains[k] * g[k];
            ys[k] += vel[k];
        }
        recenter(ys, dim);
        if ys.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("embedding diverged at iteration {t}")));
        }
        y = EmbeddingMatrix::from_raw(coords);
        iterations_run = t + 1;
    }

    let objective = final_objective(p, &y, spec, &cfg.engine)?;
    trace.push(TracePoint {
        iteration: iterations_run,
        objective,
    });
    observer(&Progress {
        restart,
        iteration: iterations_run,
        objective,
        embedding: &y,
    });
    Ok(RestartOutcome {
        embedding: y,
        objective,
        trace,
        iterations_run,
    })
}

pub fn run(p: &SparseAffinities, spec: &PriorSpec, cfg: &OptimizerConfig) -> Result<EmbeddingResult> {
    run_with_observer(p, spec, cfg, &mut |_| {})
}

/// Runs every restart and keeps the one with the lowest final objective
/// (first one on ties). `observer` sees each trace point of each restart.
pub fn run_with_observer(
    p: &SparseAffinities,
    spec: &PriorSpec,
    cfg: &OptimizerConfig,
    observer: &mut dyn FnMut(&Progress<'_>),
) -> Result<EmbeddingResult> {
    cfg.validate()?;
    let probe = EmbeddingMatrix::from_raw(Array2::zeros((p.n(), cfg.embedding_dim)));
    check_consistent(Some(p), &probe, spec)?;

    let mut best: Option<(usize, RestartOutcome)> = None;
    let mut objectives = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        match run_restart(p, spec, cfg, r, observer) {
            Ok(out) => {
                objectives.push(Some(out.objective));
                if best.as_ref().is_none_or(|(_, b)| out.objective < b.objective) {
                    best = Some((r, out));
                }
            }
            Err(Error::Numerical(msg)) => {
                log::warn!("restart {r} aborted: {msg}");
                objectives.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let (best_restart, out) = best.ok_or(Error::Diverged(cfg.restarts))?;
    let (theta, criterion) = match cfg.engine {
        Engine::Exact => (None, None),
        Engine::BarnesHut { theta, criterion } => (Some(theta), Some(criterion.to_string())),
    };
    let metadata = RunMetadata {
        n: p.n(),
        embedding_dim: cfg.embedding_dim,
        beta_prime: spec.beta_prime(),
        alpha_prime: spec.alpha_prime(),
        num_classes: spec.labels().num_classes(),
        same_pair_fraction: spec.same_pair_fraction(),
        engine: cfg.engine.name().to_string(),
        theta,
        criterion,
        iterations: cfg.iterations,
        iterations_run: out.iterations_run,
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        restarts: cfg.restarts,
        best_restart,
        restart_objectives: objectives,
        final_objective: out.objective,
        objective_trace: out.trace,
        ..RunMetadata::default()
    };
    Ok(EmbeddingResult {
        embedding: out.embedding,
        metadata,
    })
}
