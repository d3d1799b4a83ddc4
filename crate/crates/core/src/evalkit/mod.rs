//! Error metrics, velocity magnitudes, per-component evaluation, report
//! CSVs, slice export and the two ablation harnesses.

mod ablation;
mod evaluate;
mod export;
mod metrics;
mod report;

use std::path::Path;

use thiserror::Error;

use crate::datapipe::DataError;
use crate::models::ModelError;
use crate::trainer::TrainError;
use crate::volume::FieldError;

pub use ablation::{input_variants, run_ablation, AblationConfig, AblationResult, InputVariant, Suite};
pub use evaluate::{evaluate, evaluate_component, evaluate_components, predict_component, Evaluation};
pub use export::{colormap, write_ppm, write_slices, SliceFiles};
pub use metrics::{mae, mse, psnr, psnr_from_mse, rmse, velocity_magnitude, Accumulator, EvalOptions, Metrics, Region};
pub use report::{fold_means, read_report, report_csv, summarize, write_report, InputFlags, MetricReport, Target, REPORT_HEADER};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("{0}")]
    Invalid(String),
    #[error("no model for component {0}")]
    MissingComponent(&'static str),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl EvalError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        EvalError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}
