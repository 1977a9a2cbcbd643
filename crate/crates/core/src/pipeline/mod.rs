//! Corpus ingestion, the synthetic corpus, training loops and the command line.

pub mod cli;
mod config;
mod corpus;
mod eval;
mod gradcheck;
mod synth;
mod train;

use std::path::Path;

use thiserror::Error;

pub use config::{Config, TrainConfig};
pub use corpus::{
    drum_notes, frames_per_measure, measures_for_frames, normalize_notes, onset_slots, sliding_window, split, tokens_of,
    ClipRecord, Corpus, CorpusManifest, Sample, Split, Windows, DEFAULT_STRIDE, DEFAULT_WINDOW, MANIFEST_FILE,
};
pub use eval::{beat_f1, beat_peaks, completion_accuracy, onset_hit_rate, style_accuracy, BEAT_TOLERANCE_FRAMES};
pub use gradcheck::{layer_suites, GRADCHECK_TOLERANCE};
pub use synth::{make_synthetic, synth_clip, synth_clips, Archetype, EchoRule, SyntheticClip, SyntheticSpec};
pub use train::{
    corpus_vocab, estimate_bpm, load_checkpoint, save_checkpoint, train_bert, train_drum, train_style, Completer, DrumGenerator,
    Generated, LossLog, StyleClassifier,
};

use crate::bert::BertError;
use crate::drum::DrumError;
use crate::metrics::MetricError;
use crate::midi::{CodecError, SmfError};
use crate::motion::MotionError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("io: {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("pipeline: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error("midi: {0}")]
    Smf(#[from] SmfError),
    #[error("midi: {0}")]
    Codec(#[from] CodecError),
    #[error("tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("motion: {0}")]
    Motion(#[from] MotionError),
    #[error("drum: {0}")]
    Drum(#[from] DrumError),
    #[error("bert: {0}")]
    Bert(#[from] BertError),
    #[error("metrics: {0}")]
    Metric(#[from] MetricError),
}

impl PipelineError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}
