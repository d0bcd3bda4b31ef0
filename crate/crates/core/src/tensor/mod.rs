//! Dense tensors with reverse-mode differentiation, the AdamW optimizer, the
//! step-decay learning-rate schedule and the checkpoint container.

mod checkpoint;
mod data;
mod graph;
mod loss;
mod ops;
mod optim;
mod params;
mod schedule;

pub use checkpoint::{load_checkpoint, read_header, save_checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_MAGIC};
pub use data::Tensor;
pub use graph::{grad_enabled, no_grad, set_strict, strict, NoGradGuard, Var};
pub use loss::cross_entropy;
pub use optim::{AdamW, OptimizerState, ADAM_BETAS, ADAM_EPS};
pub use params::{Bindings, Param, ParamStore};
pub use schedule::{lr_schedule, LR_DECAY};


use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("{op}: input contains NaN or infinity")]
    NonFinite { op: &'static str },
    #[error("label {label} at batch index {index} is not 0 or 1")]
    InvalidLabel { index: usize, label: usize },
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint was written for variant `{found}` but `{expected}` was requested")]
    VariantMismatch { expected: String, found: String },
    #[error("checkpoint tensor `{name}`: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
