use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "xdiag", version, about = "Neural cognitive diagnosis with cross-subject transfer")]
pub struct Cli {
    /// Directory searched for relative input files that do not exist as given.
    #[arg(long, env = "XDIAG_DATA_DIR", global = true)]
    pub data_dir: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a DINA-style synthetic subject with known mastery.
    Synth(SynthArgs),
    /// Split a response file, train a base model, and save a checkpoint.
    Train(TrainArgs),
    /// Carry a pretrained checkpoint to a new subject and fine-tune it.
    Transfer(TransferArgs),
    /// Score response files with a checkpoint.
    Eval(EvalArgs),
    /// Print one student's diagnosed proficiency vector.
    Diagnose(DiagnoseArgs),
    /// Export per-item truth and prediction for one student.
    Scatter(ScatterArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseModel {
    Neuralcd,
    Kancd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MfArg {
    Mf,
    Gmf,
    Ncf1,
    Ncf2,
}

/// Flags that override keys of a JSON config file. Only flags actually
/// given are serialized.
#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    /// Number of students.
    #[arg(long = "n")]
    #[serde(rename = "n_students", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Number of items.
    #[arg(long = "m")]
    #[serde(rename = "n_items", skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    /// Number of knowledge concepts.
    #[arg(long = "k")]
    #[serde(rename = "n_knowledge", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slip: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guess: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mastery_rate: Option<f64>,
    /// Expected number of concepts per item.
    #[arg(long)]
    #[serde(rename = "avg_knowledge_per_item", skip_serializing_if = "Option::is_none")]
    pub avg_knowledge: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<FileFormat>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    #[serde(rename = "learning_rate", skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Seed for splitting, initialization, shuffling and dropout.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Epochs without validation improvement before stopping (0 = never).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long)]
    #[serde(rename = "train_fraction", skip_serializing_if = "Option::is_none")]
    pub train_frac: Option<f64>,
    #[arg(long)]
    #[serde(rename = "valid_fraction", skip_serializing_if = "Option::is_none")]
    pub valid_frac: Option<f64>,
    #[arg(long)]
    #[serde(rename = "test_fraction", skip_serializing_if = "Option::is_none")]
    pub test_frac: Option<f64>,
    /// Shuffle records globally instead of per student.
    #[arg(long)]
    #[serde(skip)]
    pub no_stratify: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(value_enum)]
    #[serde(skip)]
    pub model: BaseModel,
    /// Response file (CSV or JSONL).
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden2: Option<usize>,
    /// Latent dimension (KaNCD only).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    /// Combiner type (KaNCD only).
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mf_type: Option<MfArg>,
    /// Zero-pad the knowledge dimension to this width, so the checkpoint can
    /// later be transferred to subjects with up to this many concepts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_common: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TransferArgs {
    /// Expected kind of the source checkpoint.
    #[arg(value_enum)]
    #[serde(skip)]
    pub model: BaseModel,
    /// Pretrained base-model checkpoint.
    #[arg(long)]
    #[serde(skip)]
    pub source: PathBuf,
    /// Target-subject response file.
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head2: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    /// Keep the target embeddings at their initial values; train the head only.
    #[arg(long)]
    #[serde(skip)]
    pub freeze_embeddings: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One or more response files; each becomes one report row.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Write the reports as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub student: String,
    /// Write the JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScatterArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub student: String,
    #[arg(long)]
    pub out: PathBuf,
}
