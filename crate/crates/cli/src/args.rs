use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msa_core::analysis::ReportFormat;
use msa_core::bundle::{Modality, Split};

/// Multimodal sentiment analysis pipeline: feature extraction, fusion-model
/// training, evaluation, robustness perturbation and benchmark reports.
///
/// Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime
/// (training) failure. MSA_FORGE_THREADS caps worker parallelism.
#[derive(Debug, Parser)]
#[command(name = "msa-forge", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract features for a labelled dataset into a bundle directory.
    Extract(ExtractArgs),
    /// Train a model over one or more seeds and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint: metrics, PCA projection and tagged report.
    Eval(EvalArgs),
    /// Run a checkpoint on a single raw sample.
    Predict(PredictArgs),
    /// Apply noise or missing-modality perturbations and write a new bundle.
    Perturb(PerturbArgs),
    /// Render benchmark (table4) or generalization (table5) reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Dataset root; relative paths in the label file resolve against it.
    #[arg(long)]
    pub dataset_dir: PathBuf,
    /// Label CSV (default: <dataset-dir>/labels.csv).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Extraction config JSON: {"extractors": [...], "dataset_name", "label_range", "max_failure_fraction"}.
    #[arg(long)]
    pub config: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Registry model name (lf_dnn, ef_lstm, tfn, lmf, mfn, mult, misa, mlf_dnn, mtfn, mlmf).
    #[arg(long)]
    pub model: Option<String>,
    /// Full training config JSON; registry defaults fill missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set model.post_fusion_dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Run directory (default: runs/<model>/<timestamp>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Perturbation flags shared by `eval` and `perturb`.
#[derive(Debug, Args)]
pub struct PerturbFlags {
    /// Add Gaussian feature noise at this SNR (dB) to --modality.
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<f64>,
    /// Modality receiving noise.
    #[arg(long, requires = "snr_db")]
    pub modality: Option<Modality>,
    /// Drop a whole modality (zeroed and masked).
    #[arg(long, value_name = "MODALITY")]
    pub drop: Option<Modality>,
    /// Seed of the noise stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint directory, or a seed run directory containing `checkpoint/`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[command(flatten)]
    pub perturb: PerturbFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint directory, or a seed run directory containing `checkpoint/`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Audio WAV file.
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// Transcript.
    #[arg(long)]
    pub tokens: Option<String>,
    /// Visual feature CSV.
    #[arg(long)]
    pub vision: Option<PathBuf>,
    /// Extraction config JSON used to build the training bundle.
    #[arg(long)]
    pub config: PathBuf,
    /// Base for relative resource paths in the config (default: the config's directory).
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    /// Directory receiving the fusion representation and STFT dump.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[command(flatten)]
    pub perturb: PerturbFlags,
    /// Only perturb samples of this split.
    #[arg(long)]
    pub split: Option<Split>,
    /// Keep the clean test samples and append one tagged copy per perturbation.
    #[arg(long, conflicts_with = "split")]
    pub variants: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Style {
    Table4,
    Table5,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory searched recursively for run or eval outputs.
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long, value_enum, default_value = "table4")]
    pub style: Style,
    #[arg(long, default_value = "md")]
    pub format: ReportFormat,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
