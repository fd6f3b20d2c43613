use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hmmn_core::data::CueMode;
use hmmn_core::training::Optimizer;
use hmmn_core::Variant;

#[derive(Parser, Debug)]
#[command(
    name = "hmmn",
    version,
    about = "Memory networks for multiple-choice QA over subtitles and frames"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// Worker threads; results are bit-identical for any value.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Accepted for compatibility; all arithmetic is 64-bit.
    #[arg(long, global = true)]
    pub float64: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset and its vocabulary.
    Generate(GenerateArgs),
    /// Train on a dataset and write a checkpoint plus metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train and score every single-memory baseline representation.
    Ablate(AblateArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump attention weights for one instance.
    Attend(AttendArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Generator config (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "synthetic.json")]
    pub out: PathBuf,
    /// Vocabulary TSV path [default: <out>.vocab.tsv]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub instances: Option<usize>,
    /// answer-required or question-sufficient
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<CueMode>,
    /// Fraction of the gold scene made of answer tokens, in (0, 1].
    #[arg(long)]
    pub cue: Option<f64>,
}

/// Dataset location shared by every data-consuming command.
#[derive(Args, Debug)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Vocabulary TSV [default: the dataset's vocab_ref]
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

/// Model and optimisation knobs; each overrides the config file.
#[derive(Args, Debug, Default)]
pub struct ModelArgs {
    /// Run config (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// hmmn, hmmn-no-answer, or e2emn-<spec> such as e2emn-V->S'
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub hops: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Projection width d [default: the generator's d, else 300]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Row-softmax the frame/subtitle coattention.
    #[arg(long)]
    pub normalize_coattention: bool,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// sgd, momentum or adam
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    /// Clip the joint gradient norm.
    #[arg(long, allow_negative_numbers = true)]
    pub clip: Option<f64>,
    /// Share of the dataset held out for early stopping.
    #[arg(long)]
    pub dev_fraction: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Held-out dataset; replaces the random dev split.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long, default_value = "checkpoint.json")]
    pub out: PathBuf,
    /// Metrics JSON [default: <out>.metrics.json]
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluate as a different variant with the same weights.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Metrics JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Start every baseline from these weights instead of a fresh init.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Score the starting weights without training.
    #[arg(long)]
    pub no_train: bool,
    /// Writes <out>.tsv and <out>.json [default: TSV on stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// toy, default, or d,d_w,d_r
    #[arg(long, default_value = "toy")]
    pub dims: String,
    /// Random instances in the batch.
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value = "hmmn")]
    pub variant: Variant,
    #[arg(long, default_value_t = 2)]
    pub hops: usize,
    #[arg(long, default_value_t = 0.45, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Entries checked per matrix; larger matrices are subsampled.
    #[arg(long, default_value_t = 500)]
    pub max_entries: usize,
    /// Report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttendArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Weights to inspect [default: fresh init from --seed]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Trace JSON [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print an ASCII heatmap of the weights to stderr.
    #[arg(long)]
    pub heatmap: bool,
}

fn parse_mode(s: &str) -> Result<CueMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("expected answer-required or question-sufficient, got `{s}`"))
}
