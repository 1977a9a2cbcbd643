//! Seeded random inputs shared by the integration tests.

use std::collections::BTreeMap;

use dance2midi::midi::{sort_notes, Chord, GridNote, Instrument, Note, QuantizedClip, SlotEvent, D2MIDI_INSTRUMENTS};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const CLIPS: u64 = 1000;

/// Random note list with no same-key overlaps, so note pairing is unambiguous.
pub fn random_notes(rng: &mut ChaCha8Rng) -> Vec<Note> {
    let parts: Vec<(u8, Instrument)> = (0..rng.gen_range(1..5u8))
        .map(|t| (t, *D2MIDI_INSTRUMENTS.choose(rng).unwrap()))
        .collect();
    let mut busy: BTreeMap<(u8, Instrument, u8), u64> = BTreeMap::new();
    let mut notes = Vec::new();
    for _ in 0..rng.gen_range(0..40) {
        let (track, instrument) = *parts.choose(rng).unwrap();
        let pitch = rng.gen_range(0..=127u8);
        let onset = rng.gen_range(0..20_000u64);
        let duration = rng.gen_range(1..2_000u64);
        let key = (track, instrument, pitch);
        // keep each key's notes disjoint: only accept notes after the last one
        if busy.get(&key).is_some_and(|&end| onset < end) {
            continue;
        }
        busy.insert(key, onset + duration);
        notes.push(Note {
            pitch,
            onset,
            duration,
            track,
            instrument,
            velocity: rng.gen_range(1..=127),
        });
    }
    sort_notes(&mut notes);
    notes
}

pub fn random_clip(rng: &mut ChaCha8Rng) -> QuantizedClip {
    let mut clip = QuantizedClip::empty(rng.gen_range(1..5), 30);
    for m in &mut clip.measures {
        let mut slots: Vec<u8> = (0..64).filter(|_| rng.gen_bool(0.15)).collect();
        slots.dedup();
        m.events = slots
            .into_iter()
            .map(|slot| {
                let mut notes: Vec<GridNote> = (0..rng.gen_range(1..5))
                    .map(|_| GridNote {
                        track: rng.gen_range(0..4),
                        instrument: *D2MIDI_INSTRUMENTS.choose(rng).unwrap(),
                        pitch: rng.gen_range(0..=127),
                        duration: rng.gen_range(1..=32),
                    })
                    .collect();
                notes.sort();
                notes.dedup();
                SlotEvent {
                    slot,
                    chord: rng.gen_bool(0.4).then(|| Chord::from_id(rng.gen_range(0..24)).unwrap()),
                    notes,
                }
            })
            .collect();
    }
    clip
}


/// Shuffle the Pitch tokens inside every position group.
pub fn shuffle_chords(tokens: &mut [dance2midi::midi::TokenQuad], rng: &mut ChaCha8Rng) {
    let mut i = 0;
    while i < tokens.len() {
        let mut j = i;
        while j < tokens.len() && tokens[j].event.is_pitch() && tokens[j].pos_group == tokens[i].pos_group {
            j += 1;
        }
        if j > i {
            tokens[i..j].shuffle(rng);
            i = j;
        } else {
            i += 1;
        }
    }
}
