//! Minimal neural-network engine.
//!
//! Two backbones are supported: a small MLP (the fast path) and the 28x28
//! two-conv CNN. Either can be built in a conditional variant whose first
//! dense layer also reads a client statistics vector concatenated onto the
//! flattened features. All arithmetic is f64.

mod arch;
mod layers;
pub mod linalg;
mod optim;
mod params;
mod tensor;

pub use arch::{Architecture, ArchitectureKind, ParamLayout, ParamSlot};
pub use layers::{forward, forward_batch, loss_and_grad, mean_loss, predict, Example};
pub use optim::{sgd_step, OptimizerState, SgdConfig};
pub use params::{average_params, ModelParams};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch at {layer}: expected {expected}, got {actual}")]
    Shape {
        layer: String,
        expected: String,
        actual: String,
    },
    #[error("architecture {0} requires a statistics vector")]
    MissingStats(String),
    #[error("architecture {0} does not take a statistics vector")]
    UnexpectedStats(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite activation in layer {0}")]
    NonFinite(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("architecture mismatch: {0} vs {1}")]
    ArchitectureMismatch(String, String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("averaging weights must be nonnegative with a positive sum")]
    BadWeights,
}

pub type Result<T> = std::result::Result<T, NnError>;
