//! Autoregressive drum decoding conditioned on the fused dance sequence.

mod generate;
mod model;
mod train;

use thiserror::Error;

pub use generate::generate;
pub use model::{shifted_targets, vgm, DecoderBlock, DecoderInput, DrumConfig, DrumModel};
pub use train::{batch_grads, train_step, DrumExample};

use crate::midi::CodecError;
pub use crate::sequence::Sampler;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum DrumError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("no token is allowed by the grammar at this step")]
    EmptySupport,
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0}")]
    Invalid(String),
}
