use std::collections::BTreeSet;

use rand::Rng;

use super::model::{DecoderInput, DrumModel};
use super::DrumError;
use crate::midi::{Event, Instrument, TokenQuad, EOS};
use crate::sequence::{EventClasses, Sampler};
use crate::tensor::{Graph, ParamStore, Tensor};

/// Decoding position within the drum grammar.
#[derive(Clone, Debug)]
struct GrammarState {
    measures: usize,
    last: Option<Event>,
    last_slot: Option<u8>,
    group: u32,
    used: BTreeSet<u8>,
}

impl GrammarState {
    fn allowed_events(&self, classes: &EventClasses, max_measures: usize) -> Vec<u32> {
        let mut out = Vec::new();
        let bom_ok = self.measures < max_measures;
        let pitches: Vec<u32> = classes
            .pitches
            .iter()
            .filter(|(p, _)| !self.used.contains(p))
            .map(|&(_, id)| id)
            .collect();
        let positions = |after: Option<u8>| -> Vec<u32> {
            if classes.pitches.is_empty() {
                return Vec::new();
            }
            classes
                .positions
                .iter()
                .filter(|(s, _)| after.map_or(true, |a| *s > a))
                .map(|&(_, id)| id)
                .collect()
        };
        match self.last {
            None => out.extend(classes.bom),
            Some(Event::Bom) => {
                out.extend(positions(None));
                if bom_ok {
                    out.extend(classes.bom);
                }
                out.push(EOS);
            }
            Some(Event::Position(_)) => out.extend(pitches),
            Some(Event::Pitch(_)) | Some(Event::Chord(_)) => {
                out.extend(pitches);
                out.extend(positions(self.last_slot));
                if bom_ok {
                    out.extend(classes.bom);
                }
                out.push(EOS);
            }
        }
        out
    }
}

/// Autoregressive drum decoding from BOS under the BOM/Position/Pitch grammar.
pub fn generate(
    store: &ParamStore,
    model: &DrumModel,
    z: &Tensor,
    bpm: f64,
    sampler: &Sampler,
    max_measures: usize,
    rng: &mut impl Rng,
) -> Result<Vec<TokenQuad>, DrumError> {
    let vocab = &model.vocab;
    let classes = EventClasses::new(vocab);
    let track = model.cfg.drum_track;
    let track_id = vocab
        .track_id(track)
        .ok_or_else(|| DrumError::Invalid(format!("drum track {track} missing from the vocabulary")))?;
    let drum_id = vocab
        .instrument_id(&Instrument::Drum)
        .ok_or_else(|| DrumError::Invalid("drum instrument missing from the vocabulary".into()))?;
    let durations: Vec<u32> = vocab.durations.iter().filter_map(|&d| vocab.duration_id(d)).collect();
    if durations.is_empty() && !classes.pitches.is_empty() {
        return Err(DrumError::Invalid("vocabulary has pitches but no durations".into()));
    }

    let memory = {
        let mut g = Graph::with_params(store);
        let zv = g.constant(z.clone());
        let m = model.memory(&mut g, zv)?;
        g.value(m).clone()
    };

    let mut tokens: Vec<TokenQuad> = Vec::new();
    let mut st = GrammarState {
        measures: 0,
        last: None,
        last_slot: None,
        group: 0,
        used: BTreeSet::new(),
    };
    while tokens.len() + 1 < model.cfg.max_len {
        let input = DecoderInput::new(&tokens, vocab, bpm)?;
        let mut g = Graph::with_params(store);
        let mem = g.constant(memory.clone());
        let logits = model.decode(&mut g, mem, &input)?;
        let last = input.len() - 1;
        let allowed = st.allowed_events(&classes, max_measures);
        let ev_id = sampler
            .pick(g.value(logits[0]).row(last), &allowed, rng)
            .ok_or(DrumError::EmptySupport)?;
        if ev_id == EOS {
            break;
        }
        let event = vocab.event(ev_id).expect("allowed ids are content events");
        let tok = match event {
            Event::Bom => {
                st.measures += 1;
                st.last_slot = None;
                st.used.clear();
                TokenQuad::structural(event, st.group)
            }
            Event::Position(s) => {
                st.group += 1;
                st.last_slot = Some(s);
                st.used.clear();
                TokenQuad::structural(event, st.group)
            }
            Event::Pitch(p) => {
                st.used.insert(p);
                let d = sampler
                    .pick(g.value(logits[1]).row(last), &durations, rng)
                    .ok_or(DrumError::EmptySupport)?;
                TokenQuad {
                    event,
                    duration: vocab.duration(d),
                    track: vocab.track(track_id),
                    instrument: vocab.instrument(drum_id),
                    pos_group: st.group,
                }
            }
            Event::Chord(_) => unreachable!("chords are never offered to the drum grammar"),
        };
        st.last = Some(event);
        tokens.push(tok);
    }
    Ok(tokens)
}
