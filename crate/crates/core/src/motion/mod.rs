//! Skeleton clips, the motion graph and the context encoder.

mod encoder;
mod graph;
mod skeleton;

use thiserror::Error;

pub use encoder::{
    genre_index, skeleton_input, stgcn_forward, INPUT_CHANNELS, threshold_beats, BeatHead, Conditioning, Fuse, MotionConfig,
    MotionEncoder, StGcn, StyleNet, GENRES,
};
pub use graph::{MotionGraph, POSE33_BONES, SYNTHETIC_BONES};
pub use skeleton::{augment_affine, AffineParams, SkeletonSequence, FPS};

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("invalid skeleton: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
