use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ctsne_core::baseline_cca::{fit_cca, mincorr_project, nullspace_project, NullspaceOptions};
use ctsne_core::data::{load_dataset, load_labels, ColumnRef, Format, LabelSource};
use ctsne_core::evaluation::{feature_rank, parse_k_range, parse_selection, score_curve_with, ScoreNormalization};
use ctsne_core::pipeline::{embed_with_observer, EmbedParams};
use ctsne_core::synth::{gen_cca5, gen_synthetic10_n};
use ctsne_core::{combine_labels, Dataset, EmbeddingMatrix, Engine, LabelVector, OptimizerConfig, RunMetadata};
use ctsne_server::ServerConfig;

use crate::{CcaArgs, CcaVariant, EmbedArgs, EngineKind, Failure, Generator, RankArgs, ScoreArgs, ServeArgs, SynthArgs, ThreadArgs};

type Outcome = Result<(), Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn init_threads(t: &ThreadArgs) -> Outcome {
    let n = if t.deterministic { 1 } else { t.threads };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    Ok(load_dataset(path, Format::from_path(path))?)
}

fn read_labels(path: &Path, column: Option<&str>, n: usize) -> Result<LabelVector, Failure> {
    let source = LabelSource {
        path: path.to_path_buf(),
        column: column.map(ColumnRef::parse),
        has_header: true,
    };
    Ok(load_labels(&source, Some(n))?)
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
        }
        _ => Ok(()),
    }
}

/// Text output to a file, or stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => {
            create_parent(p)?;
            fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

pub fn synth(a: SynthArgs) -> Outcome {
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let (data, labels): (Dataset, Vec<(&str, LabelVector)>) = match a.generator {
        Generator::Synthetic10 => {
            let (data, f14, f56) = gen_synthetic10_n(a.n, a.seed).map_err(usage)?;
            (data, vec![("f14", f14), ("f56", f56)])
        }
        Generator::Cca5 => {
            let g = gen_cca5(a.seed);
            (g.data, vec![("big", g.big), ("small", g.small)])
        }
    };
    data.save_tsv(a.out_dir.join("data.tsv"))?;
    for (name, l) in &labels {
        l.save_tsv(a.out_dir.join(format!("{name}.tsv")), name)?;
    }
    eprintln!(
        "wrote {} points x {} attributes and {} label files to {}",
        data.n(),
        data.d(),
        labels.len(),
        a.out_dir.display()
    );
    Ok(())
}

/// `e.tsv` with beta' 0.1 -> `e.beta0.1.tsv`.
fn grid_path(out: &Path, beta: f64) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.beta{beta}.{}", ext.to_string_lossy()),
        None => format!("{stem}.beta{beta}"),
    };
    out.with_file_name(name)
}

pub fn embed(a: EmbedArgs) -> Outcome {
    let engine = match a.engine {
        EngineKind::Exact => Engine::Exact,
        EngineKind::Bh => Engine::BarnesHut {
            theta: a.theta,
            criterion: a.criterion.into(),
        },
    };
    let base = EmbedParams {
        perplexity: a.perplexity,
        global_sigma: a.global_sigma,
        beta_prime: a.beta_prime,
        optimizer: OptimizerConfig {
            iterations: a.iters,
            learning_rate: a.learning_rate,
            restarts: a.restarts,
            seed: a.seed,
            engine,
            ..OptimizerConfig::default()
        },
        cache_dir: a.cache_dir.clone(),
    };
    let betas = a.beta_prime_grid.clone().unwrap_or_else(|| vec![a.beta_prime]);
    if betas.is_empty() {
        return Err(usage("--beta-prime-grid is empty"));
    }
    let runs: Vec<(EmbedParams, PathBuf)> = betas
        .iter()
        .map(|&b| {
            let params = EmbedParams {
                beta_prime: b,
                ..base.clone()
            };
            params.validate().map_err(usage)?;
            let out = if a.beta_prime_grid.is_some() { grid_path(&a.out, b) } else { a.out.clone() };
            Ok((params, out))
        })
        .collect::<Result<_, Failure>>()?;
    if a.labels.is_empty() && (a.beta_prime_grid.is_some() || a.beta_prime != 0.01) {
        log::warn!("no --labels given: running plain t-SNE, beta' is ignored");
    }
    init_threads(&a.threads)?;

    let data = load_data(&a.data)?;
    let mut labels: Option<LabelVector> = None;
    for path in &a.labels {
        let l = read_labels(path, a.label_column.as_deref(), data.n())?;
        labels = Some(match labels {
            None => l,
            Some(acc) => combine_labels(&acc, &l)?,
        });
    }
    for (params, out) in runs {
        let result = embed_with_observer(&data, labels.as_ref(), &params, &mut |p| {
            log::info!("restart {} iteration {}: objective {:.6}", p.restart, p.iteration, p.objective);
        })?;
        create_parent(&out)?;
        result.embedding.save_tsv(&out)?;
        result.metadata.save_json(RunMetadata::sidecar_path(&out))?;
        eprintln!(
            "{}: beta'={} alpha'={:.6} objective={:.6}",
            out.display(),
            result.metadata.beta_prime,
            result.metadata.alpha_prime,
            result.metadata.final_objective
        );
    }
    Ok(())
}

pub fn score(a: ScoreArgs) -> Outcome {
    let ks = parse_k_range(&a.k_range).map_err(usage)?;
    let norm: ScoreNormalization = a.normalization.parse().map_err(usage)?;
    let y = EmbeddingMatrix::load_tsv(&a.embedding)?;
    let labels = read_labels(&a.labels, a.label_column.as_deref(), y.n())?;
    let curve = score_curve_with(&y, &labels, &ks, norm)?;
    let mut text = String::from("k\tscore\n");
    for (k, s) in curve {
        text.push_str(&format!("{k}\t{s:?}\n"));
    }
    emit(a.out.as_deref(), &text)?;
    Ok(())
}

pub fn rank(a: RankArgs) -> Outcome {
    let data = load_data(&a.data)?;
    let text = fs::read_to_string(&a.selection_file).with_context(|| format!("reading {}", a.selection_file.display()))?;
    let selection = parse_selection(&text)?;
    let r = feature_rank(&data, &selection)?;
    if !r.converged {
        log::warn!("ranking stopped after {} iterations without converging", r.iterations);
    }
    let mut out = String::from("attribute\tweight\n");
    for &j in &r.order {
        out.push_str(&format!("{}\t{:?}\n", r.attribute_names[j], r.weights[j]));
    }
    emit(a.out.as_deref(), &out)?;
    Ok(())
}

pub fn baseline_cca(a: CcaArgs) -> Outcome {
    if a.keep == 1 {
        return Err(usage("--keep must be 0 (all) or at least 2"));
    }
    let data = load_data(&a.data)?;
    let labels = read_labels(&a.labels, a.label_column.as_deref(), data.n())?;
    let model = fit_cca(&data, &labels)?;
    let projected = match a.variant {
        CcaVariant::Nullspace => {
            let opts = NullspaceOptions {
                keep: (a.keep > 0).then_some(a.keep),
                max_directions: a.max_directions,
            };
            nullspace_project(&data, &model, opts)?
        }
        CcaVariant::Mincorr => mincorr_project(&data, &model)?,
    };
    create_parent(&a.out)?;
    projected.save_tsv(&a.out)?;
    let corr: Vec<String> = model.correlations().iter().map(|c| format!("{c:.4}")).collect();
    eprintln!(
        "{}: {} x {} (canonical correlations {})",
        a.out.display(),
        projected.n(),
        projected.d(),
        corr.join(", ")
    );
    Ok(())
}

pub fn serve(a: ServeArgs) -> Outcome {
    init_threads(&a.threads)?;
    let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    let config = ServerConfig {
        data_dir: a.data_dir,
        workers: a.workers,
    };
    rt.block_on(ctsne_server::serve(config, a.addr))
        .with_context(|| format!("serving on {}", a.addr))?;
    Ok(())
}
