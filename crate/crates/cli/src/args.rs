use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Event-stream foundation model with polygenic risk score fusion.
#[derive(Debug, Parser)]
#[command(name = "prsfm", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-signal synthetic cohort.
    Synth(SynthArgs),
    /// Filter and split a cohort, build the vocabulary, report encoding stats.
    Tokenize(TokenizeArgs),
    /// Build a PRS matrix from an effects table, LD panel and dosages.
    Prs(PrsArgs),
    /// Train a model checkpoint.
    Train(TrainArgs),
    /// Per-participant test loss and a paired comparison of two checkpoints.
    Loss(LossArgs),
    /// Trajectory-sampling risk scores (both estimators).
    Score(ScoreArgs),
    /// Paired bootstrap metric deltas and precision-recall differences.
    Eval(EvalArgs),
    /// Fixed- and random-effects pooling of per-task effects.
    Meta(MetaArgs),
    /// Classification head or PRS-embedding feature classifier.
    Transfer(TransferArgs),
    /// SVG figures from eval and meta outputs.
    Plot(PlotArgs),
    /// Run a sequence of subcommands from a pipeline document or manifest.
    Pipeline(PipelineArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Synth(_) => "synth",
            Self::Tokenize(_) => "tokenize",
            Self::Prs(_) => "prs",
            Self::Train(_) => "train",
            Self::Loss(_) => "loss",
            Self::Score(_) => "score",
            Self::Eval(_) => "eval",
            Self::Meta(_) => "meta",
            Self::Transfer(_) => "transfer",
            Self::Plot(_) => "plot",
            Self::Pipeline(_) => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArg {
    /// Output directory [default: $PRSFM_OUT/<subcommand>, or prsfm-out/<subcommand>]
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub genetic_effect: f64,
    #[arg(long, default_value_t = 0.4)]
    pub history_effect: f64,
    #[arg(long, default_value_t = 16)]
    pub n_traits: usize,
    #[arg(long, default_value_t = 40)]
    pub n_codes: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 2.0)]
    pub visit_rate: f64,
    /// Also write a synthetic GWAS fixture (effects, LD, dosages) with this many variants.
    #[arg(long, default_value_t = 0)]
    pub variants: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TokenizeArgs {
    /// Cohort directory (events.tsv, labels.tsv, prs.tsv).
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n_quantiles: usize,
    #[arg(long, default_value_t = 20)]
    pub min_events: usize,
    #[arg(long, default_value_t = 500)]
    pub max_events: usize,
    #[arg(long, default_value_t = 10)]
    pub min_code_participants: usize,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PrsArgs {
    /// Effects table (trait_id, variant_id, beta, p_value).
    #[arg(long)]
    pub effects: PathBuf,
    #[arg(long)]
    pub ld: PathBuf,
    #[arg(long)]
    pub dosages: PathBuf,
    #[arg(long)]
    pub p_lead: Option<f64>,
    #[arg(long)]
    pub p_secondary: Option<f64>,
    #[arg(long)]
    pub r2: Option<f64>,
    #[arg(long)]
    pub p_retain: Option<f64>,
    #[arg(long)]
    pub max_variants: Option<usize>,
    #[arg(long)]
    pub clip_sd: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    EhrOnly,
    PrsPrefix,
    PrsCross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ScheduleArg {
    LinearDecay,
    Constant,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Training cohort directory.
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::PrsCross)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub grad_accum: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::LinearDecay)]
    pub schedule: ScheduleArg,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub window: usize,
    #[arg(long, default_value_t = 4)]
    pub soft_tokens: usize,
    #[arg(long, default_value_t = 256)]
    pub projector_hidden: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LossArgs {
    /// Test cohort directory.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Baseline checkpoint.
    #[arg(long)]
    pub a: PathBuf,
    /// Comparison checkpoint; enables the paired tests.
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value = "target")]
    pub task: String,
    #[arg(long, default_value = "COND_TARGET")]
    pub target_code: String,
    #[arg(long, default_value_t = 0)]
    pub history_days: i64,
    #[arg(long, default_value_t = 1095)]
    pub horizon_days: i64,
    #[arg(long, default_value_t = 10)]
    pub paths: usize,
    #[arg(long, default_value_t = 128)]
    pub max_new_tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// mean, median or max over paths.
    #[arg(long, default_value = "mean")]
    pub aggregation: String,
    /// Keep generating past the horizon instead of stopping.
    #[arg(long)]
    pub no_stop_at_horizon: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Cohort directory holding the labels.
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, default_value = "target")]
    pub task: String,
    /// Score file of model A (baseline).
    #[arg(long)]
    pub a: PathBuf,
    /// Score file of model B.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value = "path_probability")]
    pub estimator_a: String,
    /// Defaults to the estimator of A.
    #[arg(long)]
    pub estimator_b: Option<String>,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 101)]
    pub recall_grid: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MetaArgs {
    /// Table with columns label, effect, se.
    #[arg(long, conflicts_with = "metrics")]
    pub effects: Option<PathBuf>,
    /// Eval metric tables; the delta and its CI half-width give effect and se.
    #[arg(long, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
    /// Metric row to pool from the metric tables.
    #[arg(long, default_value = "auroc")]
    pub metric: String,
    /// Labels for the metric tables [default: parent directory names].
    #[arg(long, num_args = 1..)]
    pub labels: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pathway {
    /// Linear head on the frozen backbone.
    Head,
    /// MLP on projector embeddings versus raw PRS.
    Features,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TransferArgs {
    #[arg(long, value_enum)]
    pub pathway: Pathway,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "target")]
    pub task: String,
    #[arg(long, default_value = "COND_TARGET")]
    pub target_code: String,
    #[arg(long, default_value_t = 0)]
    pub history_days: i64,
    /// Positions kept free after the context, as for generative scoring.
    #[arg(long, default_value_t = 128)]
    pub reserve: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlotArgs {
    /// metrics.tsv from eval or transfer.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// roc.tsv from eval.
    #[arg(long)]
    pub roc: Option<PathBuf>,
    /// pr_difference.tsv from eval.
    #[arg(long)]
    pub pr: Option<PathBuf>,
    /// meta.tsv from meta.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    /// Pipeline document or a previous pipeline manifest [default: built-in demo].
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArg,
}
