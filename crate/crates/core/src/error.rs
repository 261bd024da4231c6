use std::path::PathBuf;

use thiserror::Error;

use crate::data::InstructionType;
use crate::model::Modality;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("shape count {requested} outside {min}..={max}")]
    ShapeCount {
        requested: usize,
        min: usize,
        max: usize,
    },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("ambiguous scene: more than one {0}")]
    AmbiguousScene(String),
    #[error("cannot synthesise audio for empty text")]
    EmptyText,
    #[error("audio width {0} below the minimum of 8")]
    AudioWidth(usize),
    #[error("{path}: line {line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("sample {id}: missing image {path}")]
    MissingSidecar { id: String, path: PathBuf },
    #[error("sample {id}: {message}")]
    InvalidSample { id: String, message: String },
    #[error("image: {0}")]
    Image(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("dataset has no samples")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected width {expected}, got {got}")]
    WidthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("image must have 3 channels, got {0}")]
    Channels(usize),
    #[error("image {width}x{height} smaller than the 8x8 minimum")]
    ImageTooSmall { width: usize, height: usize },
    #[error("sequence length {len} exceeds maximum {max}")]
    Overlength { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("fusion needs an instruction in at least one of audio or text")]
    NoInstruction,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("character {0:?} is not in the vocabulary")]
    UnknownChar(char),
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("logits have {logits} rows but {targets} targets")]
    LossShape { logits: usize, targets: usize },
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty prediction list")]
    Empty,
    #[error("candidate and reference ids differ: {0}")]
    IdMismatch(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found}; this build reads version {supported}")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint truncated or corrupt: {0}")]
    Corrupt(String),
    #[error("checksum mismatch: checkpoint is corrupt")]
    Checksum,
    #[error("config mismatch in `{field}`: checkpoint has {found}, expected {expected}")]
    ConfigMismatch {
        field: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("sample {0} has no audio features")]
    MissingAudio(String),
    #[error("stage 2 needs a bundle trained by stage 1 (pass the override flag to skip this check)")]
    MissingStage1,
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples for cell ({0}, {1})")]
    MissingCell(InstructionType, Modality),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report serialisation: {0}")]
    Serde(String),
}

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
