//! Small dense/temporal network engine with reverse-mode gradients.

mod checkpoint;
mod graph;
pub mod layers;
mod loss;
mod optim;
mod tensor;
mod train;

pub use checkpoint::Checkpoint;
pub use graph::ComputeGraph;
pub use layers::{sigmoid, softmax_in_place, Activation, Layer};
pub use loss::{clamp_prob, focal, softmax_cross_entropy, weighted_bce, LossGrad, LossKind, PROB_CLAMP};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Param, Tensor};
pub use train::{fit, EpochEval, LearningCurve, TrainProtocol, Trainable};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch at layer `{layer}`: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: String,
        got: String,
    },
    #[error("backward called before forward at `{layer}`")]
    BackwardBeforeForward { layer: String },
    #[error("non-finite value at `{layer}`")]
    NonFinite { layer: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl NnError {
    /// Stable failure kind used in trial records.
    pub fn kind(&self) -> &'static str {
        match self {
            NnError::ShapeMismatch { .. } => "shape_mismatch",
            NnError::BackwardBeforeForward { .. } => "state_error",
            NnError::NonFinite { .. } => "numerical_divergence",
            NnError::Checkpoint(_) => "checkpoint_error",
        }
    }

    /// Layer (or structural location) the error refers to.
    pub fn location(&self) -> &str {
        match self {
            NnError::ShapeMismatch { layer, .. }
            | NnError::BackwardBeforeForward { layer }
            | NnError::NonFinite { layer } => layer,
            NnError::Checkpoint(_) => "checkpoint",
        }
    }
}
