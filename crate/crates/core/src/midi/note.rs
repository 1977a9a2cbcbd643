use std::fmt;

use serde::{Deserialize, Serialize};

/// General-MIDI channel (0-based) reserved for percussion.
pub const DRUM_CHANNEL: u8 = 9;

/// Instrument of a note: a general-MIDI program or the percussion kit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Instrument {
    Program(u8),
    Drum,
}

impl Instrument {
    pub fn is_drum(self) -> bool {
        matches!(self, Instrument::Drum)
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instrument::Program(p) => write!(f, "{p}"),
            Instrument::Drum => f.write_str("drum"),
        }
    }
}

/// The instrument set of the D2MIDI corpus: twelve melodic programs plus the drum kit.
pub const D2MIDI_INSTRUMENTS: [Instrument; 13] = [
    Instrument::Program(0),  // Acoustic Grand Piano
    Instrument::Program(8),  // Celesta
    Instrument::Program(16), // Drawbar Organ
    Instrument::Program(24), // Acoustic Guitar (nylon)
    Instrument::Program(32), // Acoustic Bass
    Instrument::Program(40), // Violin
    Instrument::Program(48), // String Ensemble 1
    Instrument::Program(62), // SynthBrass 1
    Instrument::Program(64), // Soprano Sax
    Instrument::Program(72), // Piccolo
    Instrument::Program(80), // Lead 1 (square)
    Instrument::Program(88), // Pad 1 (new age)
    Instrument::Drum,
];

/// One pitched or percussive event. Times are in ticks from the clip start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Note {
    pub pitch: u8,
    pub onset: u64,
    pub duration: u64,
    pub track: u8,
    pub instrument: Instrument,
    pub velocity: u8,
}

impl Note {
    pub fn end(&self) -> u64 {
        self.onset + self.duration
    }

    pub fn is_valid(&self) -> bool {
        self.pitch <= 127 && self.duration >= 1 && (1..=127).contains(&self.velocity)
    }

    fn sort_key(&self) -> (u8, u64, u8, Instrument, u64, u8) {
        (self.track, self.onset, self.pitch, self.instrument, self.duration, self.velocity)
    }
}

/// Sort notes into the canonical order: by track, then onset, then pitch.
pub fn sort_notes(notes: &mut [Note]) {
    notes.sort_by_key(Note::sort_key);
}
