use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use speechvqa_core::training::{Stage, TrainModality};
use speechvqa_core::{AdapterKind, InstructionType, Profile};

pub const PROFILE_ENV: &str = speechvqa_core::model::PROFILE_ENV;

#[derive(Debug, Parser)]
#[command(name = "speechvqa", version, about = "Speech-instructed visual question answering at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
pub enum Command {
    /// Generate a synthetic shapes dataset.
    GenData(GenDataArgs),
    /// Train one stage and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint over instruction-type x modality cells.
    Eval(EvalArgs),
    /// Answer one instruction about one image.
    Predict(PredictArgs),
    /// Re-run a command from its run manifest and compare the outputs.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Predict(_) => "predict",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub shapes_min: usize,
    #[arg(long, default_value_t = 4)]
    pub shapes_max: usize,
    /// Sets the audio feature width (tiny: 64, standard: 768).
    #[arg(long, env = PROFILE_ENV, default_value = "tiny")]
    pub profile: Profile,
    /// Restrict to these instruction types (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub types: Vec<InstructionType>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Read the written dataset back and check every sample.
    #[arg(long)]
    pub validate: bool,
    /// Run manifest path [default: <out>.run.json].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// 1, 2 or e2e.
    #[arg(long)]
    pub stage: Stage,
    /// Defaults to the adapter of --init-from, else linear.
    #[arg(long)]
    pub adapter: Option<AdapterKind>,
    /// Start from (or resume) this checkpoint.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    /// TOML file with training settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = PROFILE_ENV, default_value = "tiny")]
    pub profile: Profile,
    /// Let stage 2 start without a stage-1 checkpoint.
    #[arg(long)]
    pub allow_missing_stage1: bool,
    /// Train only on these instruction types (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub types: Vec<InstructionType>,
    /// Seed of the parameter initialisation [default: --seed].
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub min_lr: Option<f64>,
    #[arg(long)]
    pub warmup_lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// speech, text or mixed.
    #[arg(long)]
    pub modality: Option<TrainModality>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Gradient-norm limit; 0 disables clipping.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Components to freeze: audio_encoder, visual_encoder, audio_adapter,
    /// visual_adapter, lm.
    #[arg(long, value_delimiter = ',')]
    pub freeze: Vec<String>,
    /// Print a progress line every this many steps (0: never).
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
    /// Run manifest path [default: <out>.run.json].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ResponderKind {
    /// The checkpoint's generations.
    Model,
    /// Echo the reference responses (upper bound).
    Echo,
    /// Answer with empty strings (lower bound).
    Empty,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// `all`, or comma separated `type:modality` pairs such as
    /// `complex:speech,conversation:text`.
    #[arg(long, default_value = "all")]
    pub cells: String,
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    #[arg(long, default_value_t = 160)]
    pub max_new: usize,
    #[arg(long, value_enum, default_value_t = ResponderKind::Model)]
    pub responder: ResponderKind,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Recorded in the report [default: now].
    #[arg(long)]
    pub timestamp: Option<String>,
    /// Run manifest path [default: <out-dir>/eval-<hash>.run.json].
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("instruction").required(true).args(["text", "speech_from_text"])))]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// PNG image.
    #[arg(long)]
    pub image: PathBuf,
    /// Typed instruction.
    #[arg(long)]
    pub text: Option<String>,
    /// Instruction turned into pseudo-speech features.
    #[arg(long)]
    pub speech_from_text: Option<String>,
    /// Ground-truth box `x1,y1,x2,y2` to score the answer against.
    #[arg(long)]
    pub gt_bbox: Option<String>,
    #[arg(long, default_value_t = 160)]
    pub max_new: usize,
    /// Write a run manifest here.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Run manifest written by an earlier command.
    pub manifest: PathBuf,
}
