//! `ctsne`: batch front end. Exit status 0 on success, 1 for usage errors
//! (bad flags or parameter values), 2 for runtime failures.

mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctsne_core::bh::Criterion;

#[derive(Debug, Parser)]
#[command(name = "ctsne", version, about = "Conditional t-SNE: embeddings that factor out known labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset and its label files.
    Synth(SynthArgs),
    /// Embed a dataset, optionally conditioned on label files.
    Embed(EmbedArgs),
    /// Laplacian score of an embedding against labels, for a range of k.
    Score(ScoreArgs),
    /// Rank attributes by how well they separate a selection from the rest.
    Rank(RankArgs),
    /// Remove label-correlated directions with CCA before embedding.
    BaselineCca(CcaArgs),
    /// Run the HTTP job server.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    /// 10-d: 5 clusters in f1-f4, 4 clusters in f5-f6, noise in f7-f10.
    Synthetic10,
    /// 5-d: 10 clusters, each split 20/80 into two sub-clusters.
    Cca5,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "synthetic10")]
    generator: Generator,
    /// Number of points (synthetic10 only; cca5 always has 1000).
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving data.tsv plus one TSV per label vector.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EngineKind {
    Exact,
    Bh,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CriterionArg {
    /// r / d < theta
    Standard,
    /// r / d^2 < theta
    Paper,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Standard => Criterion::Standard,
            CriterionArg::Paper => Criterion::Paper,
        }
    }
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Input dataset (TSV, or CSV by extension) with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Label file; repeat to condition on the combination of several.
    #[arg(long)]
    labels: Vec<PathBuf>,
    /// Column to read from each label file (name or 0-based index).
    #[arg(long)]
    label_column: Option<String>,
    /// Prior weight of different-label pairs, in (0, 1].
    #[arg(long, default_value_t = 0.01, conflicts_with = "beta_prime_grid")]
    beta_prime: f64,
    /// Comma-separated beta' values; writes one embedding per value.
    #[arg(long, value_delimiter = ',')]
    beta_prime_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    /// Dense affinities with this single bandwidth instead of perplexity.
    #[arg(long)]
    global_sigma: Option<f64>,
    #[arg(long, value_enum, default_value = "bh")]
    engine: EngineKind,
    /// Barnes-Hut accuracy; 0 is exact.
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, value_enum, default_value = "standard")]
    criterion: CriterionArg,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 200.0)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent random starts; the lowest final objective wins.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[command(flatten)]
    threads: ThreadArgs,
    /// Reuse input affinities across runs on the same data.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Output embedding TSV; metadata goes to <out>.meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ThreadArgs {
    /// Worker threads (0 = one per core).
    #[arg(long, env = "CTSNE_THREADS", default_value_t = 0)]
    threads: usize,
    /// Single-threaded run; output is byte-identical across machines with
    /// the same floating-point behaviour.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    embedding: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    label_column: Option<String>,
    /// start:end:step (inclusive) or a comma-separated list.
    #[arg(long, default_value = "10:100:10")]
    k_range: String,
    #[arg(long, default_value = "edge-weighted")]
    normalization: String,
    /// Output TSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[arg(long)]
    data: PathBuf,
    /// Newline-separated 0-based row indices.
    #[arg(long)]
    selection_file: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CcaVariant {
    /// Project out the label-correlated directions.
    Nullspace,
    /// Keep the two directions least correlated with the labels.
    Mincorr,
}

#[derive(Debug, Args)]
struct CcaArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long, value_enum, default_value = "nullspace")]
    variant: CcaVariant,
    /// Cap on removed directions (nullspace); all canonical ones by default.
    #[arg(long)]
    max_directions: Option<usize>,
    /// Output dimensions (nullspace); 0 keeps the whole remainder.
    #[arg(long, default_value_t = 2)]
    keep: usize,
    /// Projected dataset TSV, usable as `embed --data`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Registry of datasets, priors and job results.
    #[arg(long, default_value = "ctsne-data")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    threads: ThreadArgs,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ctsne_core::Error> for Failure {
    fn from(e: ctsne_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Embed(a) => commands::embed(a),
        Command::Score(a) => commands::score(a),
        Command::Rank(a) => commands::rank(a),
        Command::BaselineCca(a) => commands::baseline_cca(a),
        Command::Serve(a) => commands::serve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            // Core errors already embed their source in the message.
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
