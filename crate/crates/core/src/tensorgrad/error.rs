use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, {lhs_name} {lhs:?} vs {rhs_name} {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs_name: &'static str,
        lhs: Vec<usize>,
        rhs_name: &'static str,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: incompatible inputs {shapes:?}: {reason}")]
    Incompatible {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
        reason: String,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}
