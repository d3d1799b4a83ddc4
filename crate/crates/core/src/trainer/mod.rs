//! Per-component training with Huber loss, Adam and per-step cosine decay,
//! plus checkpoints that resume bit-identically.

mod checkpoint;
mod optim;
mod train;

use std::path::Path;

use thiserror::Error;

use crate::datapipe::DataError;
use crate::models::ModelError;
use crate::tensorgrad::TensorError;

pub use checkpoint::{Checkpoint, CheckpointMeta, Progress, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use train::{
    huber_over, prepare, stack, EpochRecord, StepRecord, TrainConfig, TrainReport, TrainSample, Trainer, BEST_CHECKPOINT,
    HUBER_DELTA, LAST_CHECKPOINT, METRICS_FILE, METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: non-finite {what}")]
    Diverged { step: usize, what: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl TrainError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        TrainError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}
