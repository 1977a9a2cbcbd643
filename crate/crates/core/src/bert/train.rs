use rand::Rng;

use super::mask::{completion_mask, measure_mask, reveal_some, MaskedBatch};
use super::model::BertModel;
use super::complete::non_drum_tracks;
use super::BertError;
use crate::midi::TokenQuad;
use crate::sequence::weighted_loss;
use crate::tensor::{adam_step, AdamConfig, Graph, ParamGrads, ParamStore, Schedule, Var};

/// Vocabulary-weighted loss over the masked positions of one batch entry.
pub fn batch_loss(g: &mut Graph<'_>, model: &BertModel, batch: &MaskedBatch, weights: [f64; 4]) -> Result<Var, BertError> {
    let rows = batch.masked_positions();
    if rows.is_empty() {
        return Err(BertError::Invalid("no masked positions".into()));
    }
    let logits = model.forward(g, &batch.input, &batch.groups, Some(&rows))?;
    let targets: Vec<[Option<u32>; 4]> = rows.iter().map(|&r| batch.targets[r]).collect();
    Ok(weighted_loss(g, &logits, &targets, weights)?)
}

/// Half the time measure-aware masking, otherwise a completion layout hiding a
/// random non-empty subset of the non-drum tracks, part of it already filled in.
pub fn training_mask(tokens: &[TokenQuad], model: &BertModel, rng: &mut impl Rng) -> Result<MaskedBatch, BertError> {
    let tracks = non_drum_tracks(tokens);
    if tracks.is_empty() || rng.gen_bool(0.5) {
        return measure_mask(tokens, &model.vocab, rng, model.cfg.mask_rate);
    }
    let mut hidden: Vec<u8> = tracks.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if hidden.is_empty() {
        hidden.push(tracks[rng.gen_range(0..tracks.len())]);
    }
    let mut batch = completion_mask(tokens, &hidden, &model.vocab)?;
    reveal_some(&mut batch, rng);
    Ok(batch)
}

pub fn batch_grads(store: &ParamStore, model: &BertModel, batch: &[MaskedBatch]) -> Result<(f64, ParamGrads), BertError> {
    if batch.is_empty() {
        return Err(BertError::EmptyBatch);
    }
    let weights = model.field_weights();
    let mut total = 0.0;
    let mut grads = ParamGrads::zeros_like(store);
    for b in batch {
        let mut g = Graph::with_params(store);
        let loss = batch_loss(&mut g, model, b, weights)?;
        total += g.value(loss).data()[0];
        grads.accumulate(&g.backward(loss)?.params(store));
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((total * scale, grads))
}

/// Mask each sequence on the fly, then one Adam update at step `t` (1-based).
pub fn train_step_bert(
    store: &mut ParamStore,
    model: &BertModel,
    sequences: &[Vec<TokenQuad>],
    rng: &mut impl Rng,
    t: u64,
    schedule: &Schedule,
    adam: &AdamConfig,
) -> Result<f64, BertError> {
    let batch: Vec<MaskedBatch> = sequences
        .iter()
        .map(|s| training_mask(s, model, rng))
        .collect::<Result<_, _>>()?;
    let (loss, grads) = batch_grads(store, model, &batch)?;
    adam_step(store, &grads, t, schedule, adam)?;
    Ok(loss)
}
