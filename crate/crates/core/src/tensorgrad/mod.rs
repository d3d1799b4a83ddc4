//! Dense tensors with reverse-mode differentiation and the volumetric
//! operators used by the reconstruction networks.

mod check;
mod error;
pub mod kernels;
mod scalar;
mod suite;
mod tape;
mod tensor;

pub use check::{
    finite_diff_check, numeric_gradient, relative_error, tape_gradient, worst_relative_error, REL_ERR_FLOOR,
};
pub use suite::{adjoint_suite, gradient_suite, CheckOutcome, ADJOINT_TOL, GRAD_TOL, MODEL_CONV_CONFIGS};
pub use error::TensorError;
pub use scalar::Real;
pub use tape::{huber, Gradients, Tape, Var};
pub use tensor::Tensor;
