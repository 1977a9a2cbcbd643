//! Quad tokens: (event, duration, track, instrument) plus a position group.
//!
//! A measure is encoded as `BOM`, then for every occupied slot a `Position`
//! token, an optional `Chord` token and one `Pitch` token per note. All tokens
//! from a `Position` up to the next `Position` share one `pos_group`, which is
//! what relative-position attention keys on.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::chord::Chord;
use super::note::Instrument;
use super::quantize::{GridNote, Measure, QuantizedClip, SlotEvent, SLOTS_PER_MEASURE};
use super::vocab::{Field, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Event {
    Bom,
    Chord(Chord),
    Position(u8),
    Pitch(u8),
}

impl Event {
    pub fn is_pitch(&self) -> bool {
        matches!(self, Event::Pitch(_))
    }

    pub fn is_position(&self) -> bool {
        matches!(self, Event::Position(_))
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Bom => f.write_str("BOM"),
            Event::Chord(c) => write!(f, "Chord:{c}"),
            Event::Position(p) => write!(f, "Position:{p}"),
            Event::Pitch(p) => write!(f, "Pitch:{p}"),
        }
    }
}

impl FromStr for Event {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CodecError::Parse(format!("unknown event `{s}`"));
        if s == "BOM" {
            return Ok(Event::Bom);
        }
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "Chord" => Chord::parse(value).map(Event::Chord).ok_or_else(bad),
            "Position" => value
                .parse::<u8>()
                .ok()
                .filter(|p| (*p as u64) < SLOTS_PER_MEASURE)
                .map(Event::Position)
                .ok_or_else(bad),
            "Pitch" => value
                .parse::<u8>()
                .ok()
                .filter(|p| *p <= 127)
                .map(Event::Pitch)
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenQuad {
    pub event: Event,
    /// Duration class in slots (1..=32); `None` on structural tokens.
    pub duration: Option<u8>,
    pub track: Option<u8>,
    pub instrument: Option<Instrument>,
    pub pos_group: u32,
}

impl TokenQuad {
    pub fn structural(event: Event, pos_group: u32) -> Self {
        TokenQuad {
            event,
            duration: None,
            track: None,
            instrument: None,
            pos_group,
        }
    }

    pub fn note(n: &GridNote, pos_group: u32) -> Self {
        TokenQuad {
            event: Event::Pitch(n.pitch),
            duration: Some(n.duration),
            track: Some(n.track),
            instrument: Some(n.instrument),
            pos_group,
        }
    }

    /// Whether the attribute fields agree with the event kind.
    pub fn is_well_formed(&self) -> bool {
        let attrs = [self.duration.is_some(), self.track.is_some(), self.instrument.is_some()];
        if self.event.is_pitch() {
            attrs.iter().all(|a| *a)
        } else {
            attrs.iter().all(|a| !*a)
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("{} value {value} is not in the vocabulary", field.name())]
    NotInVocab { field: Field, value: String },
    #[error("{} id {id} is not a content token", field.name())]
    BadId { field: Field, id: u32 },
    #[error("structural error at token {index}: {reason}")]
    Structure { index: usize, reason: &'static str },
    #[error("token text: {0}")]
    Parse(String),
}

/// Encode a quantized clip into quad tokens, checking every value against `vocab`.
pub fn encode(clip: &QuantizedClip, vocab: &Vocab) -> Result<Vec<TokenQuad>, CodecError> {
    let mut out = Vec::new();
    let mut group = 0u32;
    for measure in &clip.measures {
        out.push(TokenQuad::structural(Event::Bom, group));
        for ev in &measure.events {
            group += 1;
            out.push(TokenQuad::structural(Event::Position(ev.slot), group));
            if let Some(c) = ev.chord {
                out.push(TokenQuad::structural(Event::Chord(c), group));
            }
            for n in &ev.notes {
                out.push(TokenQuad::note(n, group));
            }
        }
    }
    for t in &out {
        vocab.contains(t)?;
    }
    Ok(out)
}

/// Decode quad tokens back into a clip.
///
/// Notes under one position are collected as a multiset, so the order of
/// `Pitch` tokens within a position group never affects the result. Repeated
/// `Position` tokens for a slot already seen in the measure merge into it.
pub fn decode(tokens: &[TokenQuad], vocab: &Vocab, ticks_per_slot: u64) -> Result<QuantizedClip, CodecError> {
    let mut clip = QuantizedClip::empty(0, ticks_per_slot);
    let mut slot_open = false;
    for (index, t) in tokens.iter().enumerate() {
        vocab.contains(t)?;
        if !t.is_well_formed() {
            return Err(CodecError::Structure {
                index,
                reason: "attribute fields do not match the event kind",
            });
        }
        let measure = match (t.event, clip.measures.last_mut()) {
            (Event::Bom, _) => {
                clip.measures.push(Measure::default());
                slot_open = false;
                continue;
            }
            (_, None) => {
                return Err(CodecError::Structure {
                    index,
                    reason: "sequence must begin with BOM",
                })
            }
            (_, Some(m)) => m,
        };
        match t.event {
            Event::Bom => unreachable!(),
            Event::Position(slot) => {
                measure.events.push(SlotEvent {
                    slot,
                    chord: None,
                    notes: Vec::new(),
                });
                slot_open = true;
            }
            Event::Chord(c) => {
                if !slot_open {
                    return Err(CodecError::Structure {
                        index,
                        reason: "Chord before any Position in its measure",
                    });
                }
                measure.events.last_mut().unwrap().chord = Some(c);
            }
            Event::Pitch(pitch) => {
                if !slot_open {
                    return Err(CodecError::Structure {
                        index,
                        reason: "Pitch before any Position in its measure",
                    });
                }
                measure.events.last_mut().unwrap().notes.push(GridNote {
                    track: t.track.unwrap(),
                    instrument: t.instrument.unwrap(),
                    pitch,
                    duration: t.duration.unwrap(),
                });
            }
        }
    }
    clip.canonicalize(false);
    Ok(clip)
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

/// Render tokens in the tab-separated text format, one quad per line:
/// `event duration track instrument pos_group`. `header` lines become `#` comments.
pub fn to_text(tokens: &[TokenQuad], header: &[String]) -> String {
    let mut s = String::new();
    for h in header {
        s.push_str("# ");
        s.push_str(h);
        s.push('\n');
    }
    for t in tokens {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            t.event,
            opt(t.duration),
            opt(t.track),
            opt(t.instrument),
            t.pos_group
        ));
    }
    s
}

/// Parse the text format. Returns the tokens and the comment lines (without `#`).
pub fn from_text(text: &str) -> Result<(Vec<TokenQuad>, Vec<String>), CodecError> {
    let mut tokens = Vec::new();
    let mut comments = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let err = |what: &str| CodecError::Parse(format!("line {}: {what}", lineno + 1));
        if cols.len() != 5 {
            return Err(err("expected 5 tab-separated columns"));
        }
        let num = |s: &str| -> Result<Option<u8>, CodecError> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| err("bad number"))
            }
        };
        let instrument = match cols[3] {
            "-" => None,
            "drum" => Some(Instrument::Drum),
            p => Some(Instrument::Program(
                p.parse::<u8>().ok().filter(|p| *p <= 127).ok_or_else(|| err("bad program"))?,
            )),
        };
        tokens.push(TokenQuad {
            event: cols[0].parse().map_err(|_| err("bad event"))?,
            duration: num(cols[1])?,
            track: num(cols[2])?,
            instrument,
            pos_group: cols[4].parse().map_err(|_| err("bad pos_group"))?,
        });
    }
    Ok((tokens, comments))
}
