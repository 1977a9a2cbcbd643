//! Dense f64 tensors, reverse-mode differentiation, Adam and checkpoints.

mod array;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod optim;
mod param;

use thiserror::Error;

pub use array::Tensor;
pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig, Schedule};
pub use param::{ParamGrads, ParamStore};

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("attention row {row} has every key masked")]
    FullyMasked { row: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter {0}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
