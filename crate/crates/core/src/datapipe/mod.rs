//! From flow snapshots to model-ready samples: normalization, sparse masks,
//! input assembly, geometry-level folds and the on-disk formats.

mod dataset;
mod folds;
mod sample;
mod volume_io;

use std::path::Path;

use thiserror::Error;

use crate::flowgen::FlowError;
use crate::tensorgrad::TensorError;
use crate::volume::FieldError;

pub use dataset::{
    sparse_seed, write_dataset, Dataset, DatasetManifest, DatasetOptions, FoldRecord, RunRecord, RunVolumes,
    MANIFEST_FILE, MANIFEST_VERSION, RUN_CHANNELS,
};
pub use folds::{kfold, FoldSplit, Partition};
pub use sample::{
    assemble_input, make_sparse_mask, resample_trilinear, sparse_count, Component, InputConfig, Normalization, Sample,
    SPARSE_FRACTION, V_IN_SCALE,
};
pub use volume_io::{decode_volume, encode_volume, fnv1a64, read_volume, write_volume};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

impl DataError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}
