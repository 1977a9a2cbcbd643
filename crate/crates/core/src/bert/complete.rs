use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mask::{hide_tracks, split_measures, Hole, Layout, Placeholder};
use super::model::BertModel;
use super::BertError;
use crate::midi::{decode, encode, Instrument, TokenIds, TokenQuad, SLOTS_PER_MEASURE};
use crate::sequence::{EventClasses, Sampler};
use crate::tensor::{Graph, ParamStore};

/// Per measure, the placeholder groups each non-drum (track, instrument) receives;
/// each entry of `groups` is the number of Pitch tokens under one Position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldPart {
    pub track: u8,
    pub instrument: Instrument,
    pub groups: Vec<usize>,
}

pub type Scaffold = Vec<Vec<ScaffoldPart>>;

/// Empirical histogram of per-measure plans for each non-drum (track, instrument).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldStats {
    pub plans: BTreeMap<String, Vec<(Vec<usize>, usize)>>,
}

fn key(track: u8, inst: Instrument) -> String {
    format!("{track}:{inst}")
}

fn parse_key(k: &str) -> Option<(u8, Instrument)> {
    let (t, i) = k.split_once(':')?;
    let inst = if i == "drum" { Instrument::Drum } else { Instrument::Program(i.parse().ok()?) };
    Some((t.parse().ok()?, inst))
}

/// The scaffold that reproduces the non-drum layout of a full sequence.
pub fn scaffold_of(tokens: &[TokenQuad]) -> Scaffold {
    let hidden: Vec<u8> = non_drum_tracks(tokens);
    let (_, holes) = hide_tracks(tokens, &hidden);
    holes
        .into_iter()
        .map(|hs| {
            let mut parts: Vec<ScaffoldPart> = Vec::new();
            for h in hs {
                match parts.last_mut() {
                    Some(p) if p.track == h.track && p.instrument == h.instrument => p.groups.push(h.pitches),
                    _ => parts.push(ScaffoldPart {
                        track: h.track,
                        instrument: h.instrument,
                        groups: vec![h.pitches],
                    }),
                }
            }
            parts
        })
        .collect()
}

/// Tracks holding at least one non-drum note.
pub fn non_drum_tracks(tokens: &[TokenQuad]) -> Vec<u8> {
    let set: BTreeSet<u8> = tokens
        .iter()
        .filter(|t| t.instrument.is_some_and(|i| !i.is_drum()))
        .filter_map(|t| t.track)
        .collect();
    set.into_iter().collect()
}

impl ScaffoldStats {
    pub fn from_corpus(corpus: &[Vec<TokenQuad>]) -> Self {
        let scaffolds: Vec<Scaffold> = corpus.iter().map(|t| scaffold_of(t)).collect();
        let keys: BTreeSet<String> = scaffolds
            .iter()
            .flatten()
            .flatten()
            .map(|p| key(p.track, p.instrument))
            .collect();
        let mut counts: BTreeMap<String, BTreeMap<Vec<usize>, usize>> = BTreeMap::new();
        for s in &scaffolds {
            for measure in s {
                for k in &keys {
                    let plan = measure
                        .iter()
                        .find(|p| &key(p.track, p.instrument) == k)
                        .map(|p| p.groups.clone())
                        .unwrap_or_default();
                    *counts.entry(k.clone()).or_default().entry(plan).or_default() += 1;
                }
            }
        }
        ScaffoldStats {
            plans: counts.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect(),
        }
    }

    /// Draw one plan per key for each of `measures` measures.
    pub fn sample(&self, measures: usize, rng: &mut impl Rng) -> Scaffold {
        (0..measures)
            .map(|_| {
                let mut parts = Vec::new();
                for (k, plans) in &self.plans {
                    let total: usize = plans.iter().map(|(_, c)| c).sum();
                    if total == 0 {
                        continue;
                    }
                    let mut u = rng.gen_range(0..total);
                    let plan = plans
                        .iter()
                        .find(|(_, c)| {
                            if u < *c {
                                true
                            } else {
                                u -= c;
                                false
                            }
                        })
                        .map(|(p, _)| p.clone())
                        .unwrap_or_default();
                    if let (false, Some((track, instrument))) = (plan.is_empty(), parse_key(k)) {
                        parts.push(ScaffoldPart {
                            track,
                            instrument,
                            groups: plan,
                        });
                    }
                }
                parts
            })
            .collect()
    }
}

/// Iteratively fill placeholders, committing the most confident 10% of the
/// original placeholder count per round.
pub fn fill(
    store: &ParamStore,
    model: &BertModel,
    layout: &Layout,
    sampler: &Sampler,
    rng: &mut impl Rng,
) -> Result<Vec<TokenIds>, BertError> {
    let vocab = &model.vocab;
    let classes = EventClasses::new(vocab);
    let positions: Vec<u32> = classes.positions.iter().map(|&(_, id)| id).collect();
    let durations: Vec<u32> = vocab.durations.iter().filter_map(|&d| vocab.duration_id(d)).collect();
    let mut ids = layout.input.clone();
    let mut open: Vec<usize> = (0..layout.len()).filter(|&i| layout.placeholders[i].is_some()).collect();
    let per_round = open.len().div_ceil(10).max(1);
    let lists = hole_lists(layout, classes.bom);
    let slot_of: BTreeMap<u32, u8> = classes.positions.iter().map(|&(s, id)| (id, s)).collect();
    while !open.is_empty() {
        let still: BTreeSet<usize> = open.iter().copied().collect();
        let mut g = Graph::with_params(store);
        let logits = model.forward(&mut g, &ids, &layout.groups, Some(&open))?;
        let mut proposals: Vec<(f64, usize, TokenIds)> = Vec::with_capacity(open.len());
        for (row, &i) in open.iter().enumerate() {
            let mut tok = ids[i];
            let conf = match layout.placeholders[i].expect("open rows are placeholders") {
                Placeholder::Position => {
                    let (lo, hi) = slot_bounds(&lists[&i], i, &ids, &still, &slot_of);
                    let inside: Vec<u32> = classes
                        .positions
                        .iter()
                        .filter(|&&(s, _)| (lo..hi).contains(&(s as i32)))
                        .map(|&(_, id)| id)
                        .collect();
                    let allowed = if inside.is_empty() { &positions } else { &inside };
                    let (id, p) = choose(g.value(logits[0]).row(row), allowed, sampler, rng)?;
                    tok[0] = id;
                    p
                }
                Placeholder::Pitch => {
                    let taken: BTreeSet<u32> = (0..ids.len())
                        .filter(|&j| j != i && layout.groups[j] == layout.groups[i] && layout.placeholders[j] == Some(Placeholder::Pitch))
                        .map(|j| ids[j][0])
                        .collect();
                    let pitches: Vec<u32> = classes
                        .pitches
                        .iter()
                        .map(|&(_, id)| id)
                        .filter(|id| !taken.contains(id))
                        .collect();
                    let (e, pe) = choose(g.value(logits[0]).row(row), &pitches, sampler, rng)?;
                    let (d, pd) = choose(g.value(logits[1]).row(row), &durations, sampler, rng)?;
                    tok[0] = e;
                    tok[1] = d;
                    pe * pd
                }
            };
            proposals.push((conf, i, tok));
        }
        proposals.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i, tok) in proposals.iter().take(per_round) {
            ids[i] = tok;
        }
        let done: BTreeSet<usize> = proposals.iter().take(per_round).map(|p| p.1).collect();
        open.retain(|i| !done.contains(i));
    }
    Ok(ids)
}

/// For every Position placeholder, the placeholders of its hole list: same
/// measure, same track and instrument, laid out in ascending slot order.
fn hole_lists(layout: &Layout, bom: Option<u32>) -> BTreeMap<usize, Vec<usize>> {
    let mut lists: BTreeMap<(usize, u32, u32), Vec<usize>> = BTreeMap::new();
    let mut measure = 0;
    for i in 0..layout.len() {
        match layout.placeholders[i] {
            None if Some(layout.input[i][0]) == bom => measure += 1,
            Some(Placeholder::Position) => {
                let part = layout.input.get(i + 1).copied().unwrap_or(layout.input[i]);
                lists.entry((measure, part[2], part[3])).or_default().push(i);
            }
            _ => {}
        }
    }
    lists.into_values().flat_map(|l| l.clone().into_iter().map(move |i| (i, l.clone()))).collect()
}

/// Half-open slot range left for placeholder `i`: above the nearest filled
/// earlier sibling and below the nearest filled later one, with room kept for
/// the open siblings in between.
fn slot_bounds(list: &[usize], i: usize, ids: &[TokenIds], open: &BTreeSet<usize>, slot_of: &BTreeMap<u32, u8>) -> (i32, i32) {
    let k = list.iter().position(|&j| j == i).expect("placeholder is in its own list");
    let slot = |j: usize| slot_of.get(&ids[j][0]).map(|&s| s as i32);
    let mut lo = 0;
    for (gap, &j) in list[..k].iter().rev().enumerate() {
        if !open.contains(&j) {
            lo = slot(j).map_or(0, |s| s + 1) + gap as i32;
            break;
        }
        lo = gap as i32 + 1;
    }
    let mut hi = SLOTS_PER_MEASURE as i32;
    for (gap, &j) in list[k + 1..].iter().enumerate() {
        if !open.contains(&j) {
            hi = slot(j).unwrap_or(SLOTS_PER_MEASURE as i32) - gap as i32;
            break;
        }
        hi = SLOTS_PER_MEASURE as i32 - gap as i32 - 1;
    }
    (lo, hi)
}

/// Pick from `allowed` and report the chosen id's probability under the allowed-only softmax.
fn choose(logits: &[f64], allowed: &[u32], sampler: &Sampler, rng: &mut impl Rng) -> Result<(u32, f64), BertError> {
    let id = sampler.pick(logits, allowed, rng).ok_or(BertError::EmptySupport)?;
    let max = allowed.iter().map(|&a| logits[a as usize]).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = allowed.iter().map(|&a| (logits[a as usize] - max).exp()).sum();
    Ok((id, (logits[id as usize] - max).exp() / z))
}

/// Complete non-drum tracks around a known sequence (normally a drum track).
/// The result is decoded and re-encoded canonically, with chords re-derived.
pub fn complete_tracks(
    store: &ParamStore,
    model: &BertModel,
    known: &[TokenQuad],
    scaffold: &Scaffold,
    sampler: &Sampler,
    rng: &mut impl Rng,
) -> Result<Vec<TokenQuad>, BertError> {
    let vocab = &model.vocab;
    let kept = split_measures(known);
    let holes: Vec<Vec<Hole>> = scaffold
        .iter()
        .map(|parts| {
            parts
                .iter()
                .flat_map(|p| {
                    p.groups.iter().map(|&n| Hole {
                        track: p.track,
                        instrument: p.instrument,
                        pitches: n,
                        truth: None,
                    })
                })
                .collect()
        })
        .collect();
    let layout = Layout::build(&kept, &holes, vocab)?;
    if layout.len() > model.cfg.max_len {
        return Err(BertError::TooLong {
            len: layout.len(),
            max: model.cfg.max_len,
        });
    }
    let ids = fill(store, model, &layout, sampler, rng)?;
    let tokens: Vec<TokenQuad> = ids
        .iter()
        .zip(&layout.groups)
        .map(|(i, g)| vocab.token(*i, *g))
        .collect::<Result<_, _>>()?;
    let mut clip = decode(&tokens, vocab, 1)?;
    clip.canonicalize(true);
    Ok(encode(&clip, vocab)?)
}
