use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensorgrad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments per parameter tensor, plus the step count used
/// for bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor<f32>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient rejects the whole
/// step before anything is modified.
pub fn adam_step(
    params: &mut [Tensor<f32>],
    grads: &[Tensor<f32>],
    state: &mut AdamState,
    lr: f64,
    hp: &AdamConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Invalid(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(TrainError::Invalid(format!("gradient {i} has shape {:?}, parameter {:?}", g.shape(), p.shape())));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gk = gk as f64;
            let mk = hp.beta1 * m[k] as f64 + (1.0 - hp.beta1) * gk;
            let vk = hp.beta2 * v[k] as f64 + (1.0 - hp.beta2) * gk * gk;
            m[k] = mk as f32;
            v[k] = vk as f32;
            let step = lr * (mk / c1) / ((vk / c2).sqrt() + hp.epsilon);
            *w = (*w as f64 - step) as f32;
        }
    }
    Ok(())
}

/// Cosine decay from `lr0` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64, lr_min: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let s = step.min(total_steps) as f64 / total_steps as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * s).cos())
}
