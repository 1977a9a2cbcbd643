use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use super::BertError;
use crate::midi::{Event, Field, Instrument, TokenIds, TokenQuad, Vocab, CONTENT_START, MASK, NONE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Replacement {
    Mask,
    Random,
    Keep,
}

/// Model input with substitutions and the targets the loss is taken on.
#[derive(Clone, Debug)]
pub struct MaskedBatch {
    pub input: Vec<TokenIds>,
    pub groups: Vec<u32>,
    /// Target ids at masked positions; every other entry is `None`.
    pub targets: Vec<[Option<u32>; 4]>,
    /// The single field chosen by measure-aware masking; `None` for completion layouts.
    pub field: Option<Field>,
    pub replacements: Vec<Option<Replacement>>,
    /// The sequence had one measure, so selection could not spread across measures.
    pub single_measure: bool,
}

impl MaskedBatch {
    pub fn masked_positions(&self) -> Vec<usize> {
        (0..self.targets.len())
            .filter(|&i| self.targets[i].iter().any(Option::is_some))
            .collect()
    }
}

/// Measure index of every token (the number of BOM tokens seen so far, minus one).
pub fn measure_of(tokens: &[TokenQuad]) -> Vec<usize> {
    let mut m: Option<usize> = None;
    tokens
        .iter()
        .map(|t| {
            if t.event == Event::Bom {
                m = Some(m.map_or(0, |x| x + 1));
            }
            m.unwrap_or(0)
        })
        .collect()
}

fn content_ids(vocab: &Vocab, field: Field) -> u32 {
    (vocab.sizes()[field.index()] as u32).saturating_sub(CONTENT_START)
}

/// Measure-aware masking: one field, `rate` of that field's tokens spread over measures,
/// replaced 80/10/10 by MASK / a random in-field token / themselves.
pub fn measure_mask(tokens: &[TokenQuad], vocab: &Vocab, rng: &mut impl Rng, rate: f64) -> Result<MaskedBatch, BertError> {
    let input: Vec<TokenIds> = tokens.iter().map(|t| vocab.token_ids(t)).collect::<Result<_, _>>()?;
    let measures = measure_of(tokens);
    let candidates: Vec<Vec<usize>> = Field::ALL
        .iter()
        .map(|f| (0..input.len()).filter(|&i| input[i][f.index()] >= CONTENT_START).collect())
        .collect();
    let fields: Vec<Field> = Field::ALL
        .into_iter()
        .filter(|f| !candidates[f.index()].is_empty() && content_ids(vocab, *f) > 0)
        .collect();
    if fields.is_empty() {
        return Err(BertError::Invalid("no maskable tokens".into()));
    }
    let field = fields[rng.gen_range(0..fields.len())];
    let cand = &candidates[field.index()];
    let n_sel = ((rate * cand.len() as f64).round() as usize).clamp(1, cand.len());
    let mut chosen: Vec<usize> = sample(rng, cand.len(), n_sel).into_iter().map(|k| cand[k]).collect();

    let distinct = |set: &[usize]| {
        let mut m: Vec<usize> = set.iter().map(|&i| measures[i]).collect();
        m.sort_unstable();
        m.dedup();
        m.len()
    };
    let single_measure = distinct(cand) < 2;
    if !single_measure && distinct(&chosen) < 2 {
        let taken = measures[chosen[0]];
        let others: Vec<usize> = cand.iter().copied().filter(|&i| measures[i] != taken).collect();
        let pick = others[rng.gen_range(0..others.len())];
        if chosen.len() == 1 || cand.len() == chosen.len() {
            chosen.push(pick);
        } else {
            *chosen.last_mut().expect("nonempty") = pick;
        }
    }
    chosen.sort_unstable();

    let f = field.index();
    let n_content = content_ids(vocab, field);
    let mut out = MaskedBatch {
        input: input.clone(),
        groups: tokens.iter().map(|t| t.pos_group).collect(),
        targets: vec![[None; 4]; input.len()],
        field: Some(field),
        replacements: vec![None; input.len()],
        single_measure,
    };
    for &i in &chosen {
        out.targets[i][f] = Some(input[i][f]);
        let u: f64 = rng.gen();
        let r = if u < 0.8 {
            out.input[i][f] = MASK;
            Replacement::Mask
        } else if u < 0.9 {
            out.input[i][f] = CONTENT_START + rng.gen_range(0..n_content);
            Replacement::Random
        } else {
            Replacement::Keep
        };
        out.replacements[i] = Some(r);
    }
    Ok(out)
}

/// Tokens of each measure, without the BOM.
pub fn split_measures(tokens: &[TokenQuad]) -> Vec<Vec<TokenQuad>> {
    let mut out: Vec<Vec<TokenQuad>> = Vec::new();
    for t in tokens {
        if t.event == Event::Bom {
            out.push(Vec::new());
        } else if let Some(m) = out.last_mut() {
            m.push(*t);
        }
    }
    out
}

/// A block of placeholders for one non-drum (track, instrument): one Position and `pitches` Pitch tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hole {
    pub track: u8,
    pub instrument: Instrument,
    pub pitches: usize,
    /// The hidden slot and notes, when known (training and evaluation).
    pub truth: Option<(u8, Vec<(u8, u8)>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placeholder {
    Position,
    Pitch,
}

/// Known tokens per measure with placeholder groups appended after them.
#[derive(Clone, Debug)]
pub struct Layout {
    pub input: Vec<TokenIds>,
    pub groups: Vec<u32>,
    pub placeholders: Vec<Option<Placeholder>>,
    /// Ground-truth ids at placeholders when every hole carries its truth.
    pub truth: Option<Vec<TokenIds>>,
}

impl Layout {
    /// `kept[m]` are measure m's known tokens (no BOM); `holes[m]` its placeholders.
    pub fn build(kept: &[Vec<TokenQuad>], holes: &[Vec<Hole>], vocab: &Vocab) -> Result<Self, BertError> {
        let mut input = Vec::new();
        let mut groups = Vec::new();
        let mut placeholders = Vec::new();
        let mut truth = Vec::new();
        let mut has_truth = true;
        let mut group = 0u32;
        let bom = vocab.token_ids(&TokenQuad::structural(Event::Bom, 0))?;
        for m in 0..kept.len().max(holes.len()) {
            input.push(bom);
            groups.push(group);
            placeholders.push(None);
            truth.push(bom);
            for t in kept.get(m).map_or(&[][..], |v| v.as_slice()) {
                if t.event == Event::Bom {
                    return Err(BertError::Invalid("kept tokens must not contain BOM".into()));
                }
                if t.event.is_position() {
                    group += 1;
                }
                let ids = vocab.token_ids(t)?;
                input.push(ids);
                groups.push(group);
                placeholders.push(None);
                truth.push(ids);
            }
            for h in holes.get(m).map_or(&[][..], |v| v.as_slice()) {
                group += 1;
                let track = vocab
                    .track_id(h.track)
                    .ok_or_else(|| BertError::Invalid(format!("track {} not in vocabulary", h.track)))?;
                let instrument = vocab
                    .instrument_id(&h.instrument)
                    .ok_or_else(|| BertError::Invalid(format!("instrument {} not in vocabulary", h.instrument)))?;
                input.push([MASK, NONE, NONE, NONE]);
                groups.push(group);
                placeholders.push(Some(Placeholder::Position));
                match &h.truth {
                    Some((slot, _)) => truth.push(vocab.token_ids(&TokenQuad::structural(Event::Position(*slot), 0))?),
                    None => has_truth = false,
                }
                for k in 0..h.pitches {
                    input.push([MASK, MASK, track, instrument]);
                    groups.push(group);
                    placeholders.push(Some(Placeholder::Pitch));
                    if let Some((_, notes)) = &h.truth {
                        let (p, d) = notes
                            .get(k)
                            .ok_or_else(|| BertError::Invalid("hole truth has fewer notes than pitches".into()))?;
                        truth.push(vocab.token_ids(&TokenQuad {
                            event: Event::Pitch(*p),
                            duration: Some(*d),
                            track: Some(h.track),
                            instrument: Some(h.instrument),
                            pos_group: 0,
                        })?);
                    }
                }
            }
        }
        Ok(Layout {
            input,
            groups,
            placeholders,
            truth: has_truth.then_some(truth),
        })
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }
}

/// Split a full sequence into the tokens kept visible and holes for `hidden` tracks.
/// Chord tokens are dropped: they summarize notes of the hidden tracks.
pub fn hide_tracks(tokens: &[TokenQuad], hidden: &[u8]) -> (Vec<Vec<TokenQuad>>, Vec<Vec<Hole>>) {
    let mut kept_all = Vec::new();
    let mut holes_all = Vec::new();
    for measure in split_measures(tokens) {
        let mut kept = Vec::new();
        let mut holes: BTreeMap<(u8, Instrument), Vec<Hole>> = BTreeMap::new();
        let mut slot = 0u8;
        let mut pending: Option<TokenQuad> = None;
        for t in measure {
            match t.event {
                Event::Position(s) => {
                    slot = s;
                    pending = Some(t);
                }
                Event::Chord(_) | Event::Bom => {}
                Event::Pitch(p) => {
                    let (tr, inst, dur) = (t.track.unwrap_or(0), t.instrument.unwrap_or(Instrument::Drum), t.duration.unwrap_or(1));
                    if hidden.contains(&tr) {
                        let list = holes.entry((tr, inst)).or_default();
                        match list.last_mut() {
                            Some(h) if h.truth.as_ref().is_some_and(|(s, _)| *s == slot) => {
                                h.pitches += 1;
                                h.truth.as_mut().unwrap().1.push((p, dur));
                            }
                            _ => list.push(Hole {
                                track: tr,
                                instrument: inst,
                                pitches: 1,
                                truth: Some((slot, vec![(p, dur)])),
                            }),
                        }
                    } else {
                        if let Some(pos) = pending.take() {
                            kept.push(pos);
                        }
                        kept.push(t);
                    }
                }
            }
        }
        kept_all.push(kept);
        holes_all.push(holes.into_values().flatten().collect());
    }
    (kept_all, holes_all)
}

/// Training example in the completion layout: the hidden tracks' event and duration fields are targets.
/// Show a random share of a completion layout's placeholders with their true
/// ids, as iterative filling does after its first rounds. At least one
/// placeholder stays masked.
pub fn reveal_some(batch: &mut MaskedBatch, rng: &mut impl Rng) {
    let mut open = batch.masked_positions();
    open.shuffle(rng);
    let keep = rng.gen_range(1..=open.len().max(1));
    for &i in open.iter().skip(keep) {
        let t = batch.targets[i];
        for f in 0..2 {
            if let Some(id) = t[f] {
                batch.input[i][f] = id;
            }
        }
        batch.targets[i] = [None; 4];
        batch.replacements[i] = None;
    }
}

pub fn completion_mask(tokens: &[TokenQuad], hidden: &[u8], vocab: &Vocab) -> Result<MaskedBatch, BertError> {
    let (kept, holes) = hide_tracks(tokens, hidden);
    let layout = Layout::build(&kept, &holes, vocab)?;
    let truth = layout.truth.clone().expect("holes from a full sequence carry truth");
    let targets = layout
        .placeholders
        .iter()
        .zip(&truth)
        .map(|(p, t)| match p {
            Some(Placeholder::Position) => [Some(t[0]), None, None, None],
            Some(Placeholder::Pitch) => [Some(t[0]), Some(t[1]), None, None],
            None => [None; 4],
        })
        .collect();
    Ok(MaskedBatch {
        replacements: layout.placeholders.iter().map(|p| p.map(|_| Replacement::Mask)).collect(),
        input: layout.input,
        groups: layout.groups,
        targets,
        field: None,
        single_measure: false,
    })
}
