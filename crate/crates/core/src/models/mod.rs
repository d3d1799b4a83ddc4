//! LVADNet3D, a five-level autoencoder with hybrid downsampling and latent
//! inflow conditioning, and the four-level UNet3D baseline.

mod config;
mod net;

use thiserror::Error;

use crate::tensorgrad::TensorError;

pub use config::{Architecture, Conditioning, Downsample, ModelConfig};
pub use net::{
    condition_concat, condition_latent, param_specs, stages, trace_shapes, ForwardOutput, Init, LatentState, Model,
    ParamSpec, ParamStore, Point, ShapeTrace, Stage, NORM_EPS, PRELU_INIT,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("model input: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn build_lvadnet3d(cfg: ModelConfig, seed: u64) -> Result<Model, ModelError> {
    if cfg.architecture != Architecture::LvadNet3d {
        return Err(ModelError::Config("build_lvadnet3d needs an LVADNet3D config".into()));
    }
    Model::new(cfg, seed)
}

pub fn build_unet3d(cfg: ModelConfig, seed: u64) -> Result<Model, ModelError> {
    if cfg.architecture != Architecture::UNet3d {
        return Err(ModelError::Config("build_unet3d needs a UNet3D config".into()));
    }
    Model::new(cfg, seed)
}
