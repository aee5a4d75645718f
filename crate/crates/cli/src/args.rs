use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "exactpc", version, about = "Exact sampling from comparison oracles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Draw exact samples from an instance (or a replayed comparison stream).
    Sample(SampleArgs),
    /// Learn the target from comparisons.
    Learn(LearnArgs),
    /// Compare naive and thinned coalescence on bimodal paths.
    Bench(BenchArgs),
    /// Run the acceptance checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Path,
    #[value(name = "bimodal_path", alias = "bimodal-path")]
    BimodalPath,
    Clique,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Uniform,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    Naive,
    Param,
    Auto,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long)]
    pub n: usize,
    /// Set size (clique and random families).
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Target shape for the path and clique families.
    #[arg(long, value_enum, default_value_t = TargetKind::Uniform)]
    pub target: TargetKind,
    #[arg(long, default_value_t = 2.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Learner settings shared by `learn` and `sample`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnerArgs {
    /// Target accuracy; defaults to 1/sqrt(n) when learning ahead of sampling
    /// and to 0.1 otherwise.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Ratio bound; defaults to the instance's declared bound, else 2.
    #[arg(long)]
    pub phi: Option<f64>,
    /// Constant C in the sample count C * n * ln(1/delta) / (lambda * epsilon^2).
    #[arg(long, default_value_t = 200.0)]
    pub sample_constant: f64,
    /// Use exact expected gradients computed from the instance.
    #[arg(long)]
    pub population_mode: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// Replay file to draw comparisons from instead of simulating them.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Output file for the sample stream; the summary goes to standard output.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = EngineChoice::Auto)]
    pub engine: EngineChoice,
    #[arg(long, default_value_t = 1)]
    pub num_samples: usize,
    /// Cap on oracle samples consumed by the coupling runs.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Estimate for the thinned engine: a `learn` output or a JSON array.
    #[arg(long)]
    pub estimate: Option<PathBuf>,
    /// Per-step trace of every coupling run.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub learner: LearnerArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LearnArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed training-set size, bypassing the lambda-based sample count.
    /// Defaults to the whole stream when replaying.
    #[arg(long)]
    pub num_samples: Option<usize>,
    #[command(flatten)]
    pub learner: LearnerArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [7, 9, 11])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-trial cap on oracle samples.
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tab-separated table, one row per size and engine.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// Criteria to run (1-12); all when absent.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Vec<u32>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
