use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sftpick_core::{Direction, Metric, ResponseStrategy, Weights};

#[derive(Debug, Parser)]
#[command(name = "sftpick", version, about = "Score and select instruction-tuning data from multi-model reward scores")]
pub struct Cli {
    /// TOML file with defaults for any flag (flags win).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads; defaults to the machine's parallelism. Never changes output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch embeddings for records that lack one.
    Embed(EmbedArgs),
    /// Compute difficulty, separability, stability and the multi-metric.
    Score(ScoreArgs),
    /// Select k instruction-response pairs and write them as SFT JSONL.
    Select(SelectArgs),
    /// Summarize a score table.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Dataset JSONL.
    #[arg(long)]
    pub input: Option<PathBuf>,

    /// Model catalog JSON; enables the model reference check.
    #[arg(long)]
    pub catalog: Option<PathBuf>,

    /// Skip invalid lines instead of aborting.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    /// Embeddings endpoint URL.
    #[arg(long)]
    pub endpoint: Option<String>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub max_retries: Option<u32>,

    /// Per-request timeout in seconds.
    #[arg(long)]
    pub timeout_s: Option<f64>,

    /// Concurrent requests.
    #[arg(long)]
    pub workers: Option<usize>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    /// Reward-model key to score with.
    #[arg(long)]
    pub reward_model: Option<String>,

    /// Multi-metric weights for difficulty,separability,stability [default: 1,1,2].
    #[arg(long, allow_hyphen_values = true)]
    pub weights: Option<Weights>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    /// Score table JSONL from `score`.
    #[arg(long)]
    pub scores: Option<PathBuf>,

    /// [default: multi]
    #[arg(long)]
    pub metric: Option<Metric>,

    /// [default: top]
    #[arg(long)]
    pub direction: Option<Direction>,

    /// Number of pairs to select [default: 1000].
    #[arg(long)]
    pub k: Option<usize>,

    /// Embedding clusters to balance across; 0 disables clustering [default: 10].
    #[arg(long)]
    pub clusters: Option<usize>,

    /// best, random or top5_random [default: best].
    #[arg(long)]
    pub response_strategy: Option<ResponseStrategy>,

    /// Reward-model key used to rank responses; optional when the dataset has only one.
    #[arg(long)]
    pub reward_model: Option<String>,

    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also write cluster assignments JSONL here.
    #[arg(long)]
    pub assignments_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,

    #[arg(long)]
    pub scores: Option<PathBuf>,

    /// Cluster assignments JSONL, for the cluster-size distribution.
    #[arg(long)]
    pub assignments: Option<PathBuf>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}
