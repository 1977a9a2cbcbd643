use super::model::DrumModel;
use super::DrumError;
use crate::midi::TokenQuad;
use crate::motion::Fuse;
use crate::tensor::{adam_step, AdamConfig, Graph, ParamGrads, ParamStore, Schedule};

/// One conditioning/drum pair. Z is rebuilt from beats and style through the fuse layer.
#[derive(Clone, Debug)]
pub struct DrumExample {
    pub beats: Vec<u8>,
    pub style: Vec<f64>,
    pub tokens: Vec<TokenQuad>,
    pub bpm: f64,
}

/// Mean loss over a batch and its parameter gradients.
pub fn batch_grads(
    store: &ParamStore,
    model: &DrumModel,
    fuse: &Fuse,
    batch: &[DrumExample],
    weights: [f64; 4],
) -> Result<(f64, ParamGrads), DrumError> {
    if batch.is_empty() {
        return Err(DrumError::EmptyBatch);
    }
    let mut total = 0.0;
    let mut grads = ParamGrads::zeros_like(store);
    for ex in batch {
        let mut g = Graph::with_params(store);
        let z = fuse.forward(&mut g, &ex.beats, &ex.style)?;
        let loss = model.loss(&mut g, z, &ex.tokens, ex.bpm, weights)?;
        total += g.value(loss).data()[0];
        grads.accumulate(&g.backward(loss)?.params(store));
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((total * scale, grads))
}

/// Teacher-forced loss, then one Adam update at step `t` (1-based).
pub fn train_step(
    store: &mut ParamStore,
    model: &DrumModel,
    fuse: &Fuse,
    batch: &[DrumExample],
    t: u64,
    schedule: &Schedule,
    adam: &AdamConfig,
) -> Result<f64, DrumError> {
    let (loss, grads) = batch_grads(store, model, fuse, batch, model.field_weights())?;
    adam_step(store, &grads, t, schedule, adam)?;
    Ok(loss)
}
