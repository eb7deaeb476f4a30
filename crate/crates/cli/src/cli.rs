use std::path::PathBuf;

use avar_core::vas::QueryKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "avar", version, about = "Measure, train and reallocate visual attention in a tiny transformer")]
pub struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Visual attention score of one or more ATND dumps.
    Analyze(AnalyzeArgs),
    /// Print the view band of a score.
    Band {
        vas: f64,
    },
    /// Pearson correlation of two comma-separated series.
    Correlate {
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        x: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        y: Vec<f64>,
    },
    /// Cold-start training on grounded lookup with optional attention objectives.
    Train(TrainArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// GRPO with visual-anchored reward shaping.
    Rl(RlArgs),
    /// Reallocate the attention stored in a dump.
    Intervene(InterveneArgs),
    /// Greedy decoding with and without attention reallocation.
    Gen(GenArgs),
    /// Run the three-stage data synthesis pipeline.
    Synth(SynthArgs),
    /// Render a training history as SVG curves.
    Report(ReportArgs),
    /// Train LM-only, objectives and objectives+RL variants and compare them.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(required = true)]
    pub dumps: Vec<PathBuf>,
    /// Query rows averaged over.
    #[arg(long, default_value = "user")]
    pub queries: QueryKind,
    /// Skip queries that cannot see any system token.
    #[arg(long)]
    pub strict: bool,
    /// Write the JSON report here as well.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Per-head CSV of the first dump.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Per-head heatmap of the first dump.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// JSONL history destination.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Checkpoint destination.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct RlArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "lambda-v")]
    pub lambda_v: Option<f64>,
    #[arg(long = "lambda-f")]
    pub lambda_f: Option<f64>,
    #[arg(long)]
    pub group: Option<usize>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub kl: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Starting checkpoint; fresh parameters from the seed otherwise.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterveneArgs {
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long)]
    pub gamma: f64,
    /// Inclusive layer range `a..b`, or a single layer.
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "user")]
    pub queries: QueryKind,
    /// Send freed mass to image keys only.
    #[arg(long)]
    pub image_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    GroundedLookup,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model checkpoint; fresh parameters from the seed otherwise.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long, value_enum, default_value = "grounded-lookup")]
    pub task: Task,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long)]
    pub layers: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Mock,
    Http,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: Backend,
    /// JSONL inputs; built-in demo inputs otherwise.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Use only the first N inputs (or N demo inputs).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Insert anchors by rule every K steps instead of asking the backend.
    #[arg(long)]
    pub rule_every: Option<usize>,
    #[arg(long)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSONL history written by `train` or `rl`.
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub svg: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub rl_steps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `a..b` (inclusive) or `a`.
pub fn parse_layers(range: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("layer range {range:?} is not `a..b` or `a`");
    match range.split_once("..") {
        Some((a, b)) => {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok((a..=b).collect())
        }
        None => Ok(vec![range.trim().parse().map_err(|_| bad())?]),
    }
}
