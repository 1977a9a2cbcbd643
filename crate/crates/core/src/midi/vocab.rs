use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::chord::Chord;
use super::note::{Instrument, D2MIDI_INSTRUMENTS};
use super::quantize::{MAX_DURATION_SLOTS, SLOTS_PER_MEASURE};
use super::token::{CodecError, Event, TokenQuad};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const NONE: u32 = 4;
/// First content id in every field table.
pub const CONTENT_START: u32 = 5;

/// The four token fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Field {
    Event,
    Duration,
    Track,
    Instrument,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Event, Field::Duration, Field::Track, Field::Instrument];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Event => "event",
            Field::Duration => "duration",
            Field::Track => "track",
            Field::Instrument => "instrument",
        }
    }
}

/// Integer ids of one token, indexed by [`Field::index`].
pub type TokenIds = [u32; 4];

pub const BOS_IDS: TokenIds = [BOS; 4];
pub const EOS_IDS: TokenIds = [EOS; 4];
pub const PAD_IDS: TokenIds = [PAD; 4];

/// Per-field token tables. Every table shares the five special ids
/// (PAD, MASK, BOS, EOS, NONE); content values follow in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub events: Vec<Event>,
    pub durations: Vec<u8>,
    pub tracks: Vec<u8>,
    pub instruments: Vec<Instrument>,
}

fn lookup<T: Ord>(table: &[T], v: &T) -> Option<u32> {
    table.binary_search(v).ok().map(|i| i as u32 + CONTENT_START)
}

fn content<T: Copy>(table: &[T], id: u32) -> Option<T> {
    id.checked_sub(CONTENT_START).and_then(|i| table.get(i as usize).copied())
}

impl Vocab {
    /// A vocabulary holding every representable value.
    pub fn complete() -> Self {
        let mut events = vec![Event::Bom];
        events.extend((0..Chord::COUNT).map(|c| Event::Chord(Chord::from_id(c).unwrap())));
        events.extend((0..SLOTS_PER_MEASURE as u8).map(Event::Position));
        events.extend((0..=127u8).map(Event::Pitch));
        let mut instruments: Vec<Instrument> = (0..=127u8).map(Instrument::Program).collect();
        instruments.push(Instrument::Drum);
        Vocab {
            events,
            durations: (1..=MAX_DURATION_SLOTS).collect(),
            tracks: (0..16).collect(),
            instruments,
        }
    }

    /// Table size per field, specials included.
    pub fn sizes(&self) -> [usize; 4] {
        let s = CONTENT_START as usize;
        [
            s + self.events.len(),
            s + self.durations.len(),
            s + self.tracks.len(),
            s + self.instruments.len(),
        ]
    }

    pub fn event_id(&self, e: &Event) -> Option<u32> {
        lookup(&self.events, e)
    }

    pub fn instrument_id(&self, i: &Instrument) -> Option<u32> {
        lookup(&self.instruments, i)
    }

    pub fn track_id(&self, t: u8) -> Option<u32> {
        lookup(&self.tracks, &t)
    }

    pub fn duration_id(&self, d: u8) -> Option<u32> {
        lookup(&self.durations, &d)
    }

    pub fn event(&self, id: u32) -> Option<Event> {
        content(&self.events, id)
    }

    pub fn duration(&self, id: u32) -> Option<u8> {
        content(&self.durations, id)
    }

    pub fn track(&self, id: u32) -> Option<u8> {
        content(&self.tracks, id)
    }

    pub fn instrument(&self, id: u32) -> Option<Instrument> {
        content(&self.instruments, id)
    }

    /// Ids of all content event tokens matching a predicate.
    pub fn event_ids_where(&self, pred: impl Fn(&Event) -> bool) -> Vec<u32> {
        self.events
            .iter()
            .enumerate()
            .filter(|(_, e)| pred(e))
            .map(|(i, _)| i as u32 + CONTENT_START)
            .collect()
    }

    pub fn contains(&self, t: &TokenQuad) -> Result<(), CodecError> {
        self.token_ids(t).map(|_| ())
    }

    /// Map a token to its per-field ids; absent fields map to NONE.
    pub fn token_ids(&self, t: &TokenQuad) -> Result<TokenIds, CodecError> {
        let missing = |field: Field, value: String| CodecError::NotInVocab { field, value };
        let event = self
            .event_id(&t.event)
            .ok_or_else(|| missing(Field::Event, t.event.to_string()))?;
        let duration = match t.duration {
            None => NONE,
            Some(d) => self.duration_id(d).ok_or_else(|| missing(Field::Duration, d.to_string()))?,
        };
        let track = match t.track {
            None => NONE,
            Some(x) => self.track_id(x).ok_or_else(|| missing(Field::Track, x.to_string()))?,
        };
        let instrument = match t.instrument {
            None => NONE,
            Some(i) => self
                .instrument_id(&i)
                .ok_or_else(|| missing(Field::Instrument, i.to_string()))?,
        };
        Ok([event, duration, track, instrument])
    }

    /// Inverse of [`Vocab::token_ids`]. Fails on special or out-of-range ids.
    pub fn token(&self, ids: TokenIds, pos_group: u32) -> Result<TokenQuad, CodecError> {
        let bad = |field: Field, id: u32| CodecError::BadId { field, id };
        let event = self.event(ids[0]).ok_or_else(|| bad(Field::Event, ids[0]))?;
        let opt = |field: Field, id: u32| -> Result<Option<u32>, CodecError> {
            if id == NONE {
                Ok(None)
            } else if id < CONTENT_START {
                Err(bad(field, id))
            } else {
                Ok(Some(id))
            }
        };
        let duration = opt(Field::Duration, ids[1])?
            .map(|id| self.duration(id).ok_or_else(|| bad(Field::Duration, id)))
            .transpose()?;
        let track = opt(Field::Track, ids[2])?
            .map(|id| self.track(id).ok_or_else(|| bad(Field::Track, id)))
            .transpose()?;
        let instrument = opt(Field::Instrument, ids[3])?
            .map(|id| self.instrument(id).ok_or_else(|| bad(Field::Instrument, id)))
            .transpose()?;
        Ok(TokenQuad {
            event,
            duration,
            track,
            instrument,
            pos_group,
        })
    }
}

/// Collect the values seen in a corpus into sorted per-field tables.
/// BOM and the thirteen D2MIDI instruments are always present.
pub fn build_vocab(corpus: &[Vec<TokenQuad>]) -> Vocab {
    let mut events = BTreeSet::from([Event::Bom]);
    let mut durations = BTreeSet::new();
    let mut tracks = BTreeSet::new();
    let mut instruments: BTreeSet<Instrument> = D2MIDI_INSTRUMENTS.into_iter().collect();
    for seq in corpus {
        for t in seq {
            events.insert(t.event);
            durations.extend(t.duration);
            tracks.extend(t.track);
            instruments.extend(t.instrument);
        }
    }
    Vocab {
        events: events.into_iter().collect(),
        durations: durations.into_iter().collect(),
        tracks: tracks.into_iter().collect(),
        instruments: instruments.into_iter().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pitch(p: u8) -> TokenQuad {
        TokenQuad {
            event: Event::Pitch(p),
            duration: Some(4),
            track: Some(0),
            instrument: Some(Instrument::Program(0)),
            pos_group: 1,
        }
    }

    #[test]
    fn pitch_ids_follow_pitch_order() {
        let v = build_vocab(&[vec![pitch(64), pitch(60)]]);
        let a = v.event_id(&Event::Pitch(60)).unwrap();
        let b = v.event_id(&Event::Pitch(64)).unwrap();
        assert!(a < b);
        assert_eq!(b, a + 1);
    }

    #[test]
    fn d2midi_instrument_table_has_thirteen_entries() {
        let v = build_vocab(&[vec![pitch(60)]]);
        assert_eq!(v.instruments.len(), 13);
        assert_eq!(v.sizes()[3], 13 + CONTENT_START as usize);
    }

    #[test]
    fn ids_are_dense_and_invertible() {
        let v = Vocab::complete();
        for id in CONTENT_START..v.sizes()[0] as u32 {
            let e = v.event(id).unwrap();
            assert_eq!(v.event_id(&e), Some(id));
        }
        assert!(v.event(v.sizes()[0] as u32).is_none());
        assert!(v.event(MASK).is_none());
    }

    #[test]
    fn missing_value_names_the_field() {
        let v = build_vocab(&[vec![pitch(60)]]);
        let err = v.token_ids(&pitch(61)).unwrap_err();
        assert_eq!(
            err,
            CodecError::NotInVocab {
                field: Field::Event,
                value: "Pitch:61".into()
            }
        );
    }
}
