//! Optimizer, schedule, the two-stage and end-to-end training loops, and
//! checkpointing.

mod checkpoint;
mod config;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{
    checkpoint_hash, load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_VERSION,
};
pub use config::{FreezeFlags, Stage, TrainConfig, TrainModality};
pub use optim::{clip_global_norm, global_norm, AdamW};
pub use schedule::lr_at;
pub use trainer::{
    batch_loss, dataset_loss, prepare_response, prepare_transcription, train, train_end_to_end,
    train_stage1, train_stage2, Prepared, StepLog, TrainReport, TrainState,
};
