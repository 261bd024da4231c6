//! Speech-instructed visual question answering with grounded bounding boxes.
//!
//! A desk-scale pipeline: synthetic shape scenes with spoken or typed
//! instructions, small transformer encoders for audio and images, adapters
//! into a character-level causal language model, two-stage training, and
//! caption/localisation metrics over an instruction-type × modality grid.
//!
//! All arithmetic is `f64` on the CPU and every random draw is seeded.

pub mod adapters;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod language;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod training;

pub use adapters::{AdapterConfig, AdapterKind, AudioAdapter, TokenEmbeddingSequence, VisualAdapter};
pub use data::{BBox, Dataset, DatasetConfig, InstructionType, Sample};
pub use encoders::{AudioFeatureSequence, ImageTensor, VisualTokenSequence};
pub use error::{CheckpointError, DataError, Error, EvalError, MetricError, ModelError, TrainError};
pub use eval::{evaluate, run_ablation, EvalOptions, EvalReport};
pub use language::{LMConfig, LanguageModel, Vocabulary};
pub use metrics::MetricScores;
pub use model::{Modality, ModelBundle, ModelConfig, Profile};
pub use training::{load_checkpoint, save_checkpoint, Stage, TrainConfig, TrainReport};
