use serde::{Deserialize, Serialize};

use super::chord::{detect_chord, Chord};
use super::note::{sort_notes, Instrument, Note};

/// Position slots per 4/4 measure (sixty-fourth notes).
pub const SLOTS_PER_MEASURE: u64 = 64;
/// Slots per quarter note.
pub const SLOTS_PER_QUARTER: u64 = SLOTS_PER_MEASURE / 4;
/// Durations are classes of 1..=32 slots; longer notes are clamped.
pub const MAX_DURATION_SLOTS: u8 = 32;
pub const DEFAULT_VELOCITY: u8 = 100;

/// A note on the slot grid. `duration` is in slots, 1..=32.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridNote {
    pub track: u8,
    pub instrument: Instrument,
    pub pitch: u8,
    pub duration: u8,
}

/// Everything sounding from one position slot of a measure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEvent {
    pub slot: u8,
    pub chord: Option<Chord>,
    /// Sorted by (track, instrument, pitch, duration).
    pub notes: Vec<GridNote>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Measure {
    /// Sorted by slot, one entry per occupied slot.
    pub events: Vec<SlotEvent>,
}

impl Measure {
    pub fn note_count(&self) -> usize {
        self.events.iter().map(|e| e.notes.len()).sum()
    }
}

/// A clip snapped to a 4/4 grid of 64 slots per measure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedClip {
    pub measures: Vec<Measure>,
    pub ticks_per_slot: u64,
}

impl QuantizedClip {
    pub fn empty(measures: usize, ticks_per_slot: u64) -> Self {
        QuantizedClip {
            measures: vec![Measure::default(); measures],
            ticks_per_slot,
        }
    }

    /// Append empty measures until the clip is at least `n` measures long.
    pub fn pad_to(&mut self, n: usize) {
        while self.measures.len() < n {
            self.measures.push(Measure::default());
        }
    }

    pub fn note_count(&self) -> usize {
        self.measures.iter().map(Measure::note_count).sum()
    }

    /// Expand back into tick-level notes at the default velocity.
    pub fn to_notes(&self) -> Vec<Note> {
        let mut notes = Vec::new();
        for (m, measure) in self.measures.iter().enumerate() {
            for ev in &measure.events {
                let slot = m as u64 * SLOTS_PER_MEASURE + ev.slot as u64;
                for n in &ev.notes {
                    notes.push(Note {
                        pitch: n.pitch,
                        onset: slot * self.ticks_per_slot,
                        duration: n.duration as u64 * self.ticks_per_slot,
                        track: n.track,
                        instrument: n.instrument,
                        velocity: DEFAULT_VELOCITY,
                    });
                }
            }
        }
        sort_notes(&mut notes);
        notes
    }

    /// Put every measure into canonical form: slots ascending and merged,
    /// notes sorted, chords re-derived where `rechord` is set.
    pub fn canonicalize(&mut self, rechord: bool) {
        for measure in &mut self.measures {
            measure.events.sort_by_key(|e| e.slot);
            let mut merged: Vec<SlotEvent> = Vec::with_capacity(measure.events.len());
            for ev in measure.events.drain(..) {
                match merged.last_mut() {
                    Some(last) if last.slot == ev.slot => {
                        last.notes.extend(ev.notes);
                        if ev.chord.is_some() {
                            last.chord = ev.chord;
                        }
                    }
                    _ => merged.push(ev),
                }
            }
            merged.retain(|e| !e.notes.is_empty());
            for ev in &mut merged {
                ev.notes.sort();
                if rechord {
                    ev.chord = chord_of(&ev.notes);
                }
            }
            measure.events = merged;
        }
    }
}

fn chord_of(notes: &[GridNote]) -> Option<Chord> {
    let pitches: Vec<u8> = notes
        .iter()
        .filter(|n| !n.instrument.is_drum())
        .map(|n| n.pitch)
        .collect();
    detect_chord(&pitches)
}

/// Ticks per slot for a given ticks-per-quarter resolution, when it divides evenly.
pub fn ticks_per_slot(ticks_per_quarter: u16) -> Option<u64> {
    let tpq = ticks_per_quarter as u64;
    (tpq % SLOTS_PER_QUARTER == 0 && tpq > 0).then_some(tpq / SLOTS_PER_QUARTER)
}

/// Rescale note times from one resolution to another, rounding to the nearest tick.
pub fn rescale_notes(notes: &[Note], from_tpq: u16, to_tpq: u16) -> Vec<Note> {
    let r = to_tpq as f64 / from_tpq as f64;
    notes
        .iter()
        .map(|n| Note {
            onset: (n.onset as f64 * r).round() as u64,
            duration: ((n.duration as f64 * r).round() as u64).max(1),
            ..*n
        })
        .collect()
}

fn round_div(x: u64, d: u64) -> u64 {
    (x + d / 2) / d
}

/// Snap notes to the slot grid. Onsets go to the nearest slot, durations to the
/// nearest class in 1..=32 slots, and measures are delimited every 64 slots.
pub fn quantize(notes: &[Note], ticks_per_slot: u64) -> QuantizedClip {
    assert!(ticks_per_slot > 0, "ticks_per_slot must be positive");
    let mut clip = QuantizedClip {
        measures: Vec::new(),
        ticks_per_slot,
    };
    for n in notes {
        let slot = round_div(n.onset, ticks_per_slot);
        let measure = (slot / SLOTS_PER_MEASURE) as usize;
        let duration = round_div(n.duration, ticks_per_slot).clamp(1, MAX_DURATION_SLOTS as u64) as u8;
        clip.pad_to(measure + 1);
        clip.measures[measure].events.push(SlotEvent {
            slot: (slot % SLOTS_PER_MEASURE) as u8,
            chord: None,
            notes: vec![GridNote {
                track: n.track,
                instrument: n.instrument,
                pitch: n.pitch,
                duration,
            }],
        });
    }
    clip.canonicalize(true);
    clip
}
