//! Pieces shared by the drum decoder and the bidirectional model: summed
//! per-field embeddings, per-field output heads and the vocabulary-weighted loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::midi::{Event, Field, TokenIds, TokenQuad, Vocab, SLOTS_PER_MEASURE};
use crate::nn::Linear;
use crate::tensor::{Graph, ParamStore, TensorError, Var};

type R = Result<Var, TensorError>;

/// `|V_f| / Σ|V|` for each field.
pub fn field_weights(sizes: [usize; 4]) -> [f64; 4] {
    let total: usize = sizes.iter().sum();
    sizes.map(|s| s as f64 / total as f64)
}

#[derive(Clone, Debug)]
pub struct TokenEmbedding {
    pub tables: [String; 4],
}

impl TokenEmbedding {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, sizes: [usize; 4], d: usize) -> Result<Self, TensorError> {
        let mut tables: [String; 4] = Default::default();
        for f in Field::ALL {
            let t = format!("{name}.{}", f.name());
            store.init_embedding(&t, sizes[f.index()], d, rng)?;
            tables[f.index()] = t;
        }
        Ok(TokenEmbedding { tables })
    }

    /// Sum of the four field embeddings, one row per token.
    pub fn forward(&self, g: &mut Graph<'_>, ids: &[TokenIds]) -> R {
        let mut acc = None;
        for f in 0..4 {
            let table = g.param(&self.tables[f])?;
            let col: Vec<usize> = ids.iter().map(|t| t[f] as usize).collect();
            let e = g.embed(table, &col)?;
            acc = Some(match acc {
                None => e,
                Some(a) => g.add(a, e)?,
            });
        }
        Ok(acc.expect("four fields"))
    }
}

#[derive(Clone, Debug)]
pub struct FieldHeads {
    pub heads: [Linear; 4],
}

impl FieldHeads {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, sizes: [usize; 4]) -> Result<Self, TensorError> {
        let mk = |store: &mut ParamStore, rng: &mut _, f: Field| Linear::new(store, rng, &format!("{name}.{}", f.name()), d, sizes[f.index()]);
        Ok(FieldHeads {
            heads: [
                mk(store, rng, Field::Event)?,
                mk(store, rng, Field::Duration)?,
                mk(store, rng, Field::Track)?,
                mk(store, rng, Field::Instrument)?,
            ],
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, h: Var) -> Result<[Var; 4], TensorError> {
        Ok([
            self.heads[0].forward(g, h)?,
            self.heads[1].forward(g, h)?,
            self.heads[2].forward(g, h)?,
            self.heads[3].forward(g, h)?,
        ])
    }
}

/// `Σ_f weights[f] · mean CE over the rows carrying a target for field f`.
/// Fields without any target contribute nothing; at least one target must exist.
pub fn weighted_loss(g: &mut Graph<'_>, logits: &[Var; 4], targets: &[[Option<u32>; 4]], weights: [f64; 4]) -> R {
    let mut total: Option<Var> = None;
    for f in 0..4 {
        let rows = targets.iter().filter(|t| t[f].is_some()).count();
        if rows == 0 {
            continue;
        }
        let tg: Vec<usize> = targets.iter().map(|t| t[f].unwrap_or(0) as usize).collect();
        let w: Vec<f64> = targets
            .iter()
            .map(|t| if t[f].is_some() { weights[f] / rows as f64 } else { 0.0 })
            .collect();
        let l = g.cross_entropy(logits[f], &tg, &w)?;
        total = Some(match total {
            None => l,
            Some(a) => g.add(a, l)?,
        });
    }
    total.ok_or_else(|| TensorError::Shape("weighted_loss: no target positions".into()))
}

/// Absolute slot (measure·64 + slot) of every token; structural tokens before
/// any Position sit at the start of their measure.
pub fn slot_times(tokens: &[TokenQuad]) -> Vec<u64> {
    let mut measure: Option<u64> = None;
    let mut slot = 0u64;
    tokens
        .iter()
        .map(|t| {
            match t.event {
                Event::Bom => {
                    measure = Some(measure.map_or(0, |m| m + 1));
                    slot = 0;
                }
                Event::Position(s) => slot = s as u64,
                _ => {}
            }
            measure.unwrap_or(0) * SLOTS_PER_MEASURE + slot
        })
        .collect()
}

/// Frames per slot at a tempo, for `fps` video frames per second.
pub fn frames_per_slot(bpm: f64, fps: f64) -> f64 {
    fps * 60.0 / (bpm * (SLOTS_PER_MEASURE / 4) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    /// At or below 1e-8 decoding is greedy.
    pub temperature: f64,
    /// 0 keeps every allowed token.
    pub top_k: usize,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler {
            temperature: 1.0,
            top_k: 16,
        }
    }
}

impl Sampler {
    pub const GREEDY: Sampler = Sampler {
        temperature: 0.0,
        top_k: 1,
    };

    /// Draw one id from `allowed`, scored by `logits[id]`; `None` when nothing is allowed.
    pub fn pick(&self, logits: &[f64], allowed: &[u32], rng: &mut impl Rng) -> Option<u32> {
        if allowed.is_empty() {
            return None;
        }
        let mut ranked: Vec<u32> = allowed.to_vec();
        ranked.sort_by(|&a, &b| logits[b as usize].total_cmp(&logits[a as usize]).then(a.cmp(&b)));
        if self.temperature <= 1e-8 {
            return Some(ranked[0]);
        }
        if self.top_k > 0 {
            ranked.truncate(self.top_k);
        }
        let top = logits[ranked[0] as usize];
        let w: Vec<f64> = ranked
            .iter()
            .map(|&i| ((logits[i as usize] - top) / self.temperature).exp())
            .collect();
        let total: f64 = w.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (i, wi) in w.iter().enumerate() {
            if u < *wi {
                return Some(ranked[i]);
            }
            u -= wi;
        }
        ranked.last().copied()
    }
}

/// Event ids of a vocabulary grouped by kind.
#[derive(Clone, Debug, Default)]
pub struct EventClasses {
    pub bom: Option<u32>,
    pub positions: Vec<(u8, u32)>,
    pub pitches: Vec<(u8, u32)>,
    pub chords: Vec<u32>,
}

impl EventClasses {
    pub fn new(vocab: &Vocab) -> Self {
        let mut c = EventClasses {
            bom: vocab.event_id(&Event::Bom),
            ..Default::default()
        };
        for e in &vocab.events {
            let id = vocab.event_id(e).expect("own table");
            match *e {
                Event::Position(s) => c.positions.push((s, id)),
                Event::Pitch(p) => c.pitches.push((p, id)),
                Event::Chord(_) => c.chords.push(id),
                Event::Bom => {}
            }
        }
        c
    }
}
