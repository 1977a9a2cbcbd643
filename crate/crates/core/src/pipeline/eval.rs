//! Scores used to check learned behavior on the synthetic corpus.

use rand::Rng;

use super::corpus::{onset_slots, Sample};
use super::train::{Completer, StyleClassifier};
use super::PipelineError;
use crate::bert::{fill, hide_tracks, non_drum_tracks, Layout};
use crate::midi::{TokenQuad, SLOTS_PER_MEASURE};
use crate::motion::genre_index;
use crate::sequence::Sampler;

/// A detected beat may sit this many frames from the annotated one.
pub const BEAT_TOLERANCE_FRAMES: usize = 1;

/// Collapse each run of consecutive positive frames to its middle frame.
pub fn beat_peaks(flags: &[u8]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().chain(std::iter::once(&0)).enumerate() {
        match (f != 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                peaks.push((s + i - 1) / 2);
                start = None;
            }
            _ => {}
        }
    }
    peaks
}

/// F1 of detected beat peaks against annotated frames, one-to-one within `tol` frames.
pub fn beat_f1(pred_flags: &[u8], truth: &[usize], tol: usize) -> f64 {
    let pred = beat_peaks(pred_flags);
    if pred.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let mut truth = truth.to_vec();
    truth.sort_unstable();
    let mut used = vec![false; truth.len()];
    let mut hits = 0usize;
    for &p in &pred {
        let best = (0..truth.len())
            .filter(|&j| !used[j] && truth[j].abs_diff(p) <= tol)
            .min_by_key(|&j| (truth[j].abs_diff(p), j));
        if let Some(j) = best {
            used[j] = true;
            hits += 1;
        }
    }
    if hits == 0 {
        return 0.0;
    }
    let precision = hits as f64 / pred.len() as f64;
    let recall = hits as f64 / truth.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn style_accuracy(clf: &StyleClassifier, samples: &[&Sample]) -> Result<f64, PipelineError> {
    if samples.is_empty() {
        return Err(PipelineError::Invalid("no clips to classify".into()));
    }
    let mut right = 0;
    for s in samples {
        let truth = genre_index(&s.genre).ok_or_else(|| PipelineError::Invalid(format!("unknown genre {}", s.genre)))?;
        right += (clf.predict(&s.skeleton)? == truth) as usize;
    }
    Ok(right as f64 / samples.len() as f64)
}

/// Hide every non-drum track, fill the placeholders with the true layout and
/// report the fraction of placeholder tokens matching the original exactly.
pub fn completion_accuracy(
    completer: &Completer,
    samples: &[&Sample],
    sampler: &Sampler,
    rng: &mut impl Rng,
) -> Result<f64, PipelineError> {
    let vocab = &completer.model.vocab;
    let (mut right, mut total) = (0usize, 0usize);
    for s in samples {
        let hidden = non_drum_tracks(&s.tokens);
        if hidden.is_empty() {
            continue;
        }
        let (kept, holes) = hide_tracks(&s.tokens, &hidden);
        let layout = Layout::build(&kept, &holes, vocab)?;
        let truth = layout.truth.clone().expect("holes cut from a full sequence carry truth");
        let ids = fill(&completer.store, &completer.model, &layout, sampler, rng)?;
        for i in (0..layout.len()).filter(|&i| layout.placeholders[i].is_some()) {
            total += 1;
            right += (ids[i] == truth[i]) as usize;
        }
    }
    if total == 0 {
        return Err(PipelineError::Invalid("no hidden tokens to complete".into()));
    }
    Ok(right as f64 / total as f64)
}

/// Fraction of note onsets in `tokens` within `tol` seconds of a beat time.
/// `None` when there are no onsets.
pub fn onset_hit_rate(tokens: &[TokenQuad], bpm: f64, beat_times: &[f64], tol: f64) -> Option<f64> {
    let slot_secs = 60.0 / bpm / (SLOTS_PER_MEASURE / 4) as f64;
    let onsets = onset_slots(tokens);
    if onsets.is_empty() {
        return None;
    }
    let hits = onsets
        .iter()
        .filter(|&&s| {
            let t = s as f64 * slot_secs;
            beat_times.iter().any(|b| (b - t).abs() <= tol + 1e-9)
        })
        .count();
    Some(hits as f64 / onsets.len() as f64)
}
