//! Bidirectional masked model over full quad sequences, and track completion.

mod complete;
mod mask;
mod model;
mod train;

use thiserror::Error;

pub use complete::{complete_tracks, fill, non_drum_tracks, scaffold_of, Scaffold, ScaffoldPart, ScaffoldStats};
pub use mask::{
    completion_mask, hide_tracks, reveal_some, measure_mask, measure_of, split_measures, Hole, Layout, MaskedBatch, Placeholder,
    Replacement,
};
pub use model::{BertConfig, BertModel};
pub use train::{batch_grads, batch_loss, train_step_bert, training_mask};

use crate::midi::CodecError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum BertError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("no token is allowed at a placeholder")]
    EmptySupport,
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0}")]
    Invalid(String),
}
