use std::collections::{BTreeMap, VecDeque};

mod common;

use common::{random_clip, random_notes, shuffle_chords, CLIPS};
use dance2midi::midi::{
    build_vocab, decode, encode, parse_smf, write_smf, Chord, Event, GridNote, Measure, TokenQuad, Vocab,
    D2MIDI_INSTRUMENTS,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn smf_write_parse_is_identity_on_random_clips() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..CLIPS {
        let notes = random_notes(&mut rng);
        let bpm = rng.gen_range(60.0..180.0);
        let clip = parse_smf(&write_smf(&notes, bpm).bytes).unwrap();
        assert_eq!(clip.notes, notes, "case {case}");
        assert_eq!(clip.dangling, 0);
    }
}

#[test]
fn encode_decode_is_identity_on_random_clips() {
    let vocab = Vocab::complete();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..CLIPS {
        let clip = random_clip(&mut rng);
        let tokens = encode(&clip, &vocab).unwrap();
        assert!(tokens.iter().all(TokenQuad::is_well_formed));
        assert!(tokens.windows(2).all(|w| w[0].pos_group <= w[1].pos_group));
        assert_eq!(decode(&tokens, &vocab, 30).unwrap(), clip, "case {case}");
    }
}

#[test]
fn chord_permutation_invariance_on_random_clips() {
    let vocab = Vocab::complete();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..CLIPS {
        let clip = random_clip(&mut rng);
        let mut tokens = encode(&clip, &vocab).unwrap();
        shuffle_chords(&mut tokens, &mut rng);
        assert_eq!(decode(&tokens, &vocab, 30).unwrap(), clip, "case {case}");
    }
}

/// Reference interpreter: a map from (measure, slot) to chord and note multiset.
fn reference_decode(tokens: &[TokenQuad]) -> Vec<BTreeMap<u8, (Option<Chord>, Vec<GridNote>)>> {
    let mut out: Vec<BTreeMap<u8, (Option<Chord>, Vec<GridNote>)>> = Vec::new();
    let mut slot = 0;
    for t in tokens {
        match t.event {
            Event::Bom => out.push(BTreeMap::new()),
            Event::Position(s) => {
                slot = s;
                out.last_mut().unwrap().entry(s).or_default();
            }
            Event::Chord(c) => out.last_mut().unwrap().get_mut(&slot).unwrap().0 = Some(c),
            Event::Pitch(p) => out.last_mut().unwrap().get_mut(&slot).unwrap().1.push(GridNote {
                track: t.track.unwrap(),
                instrument: t.instrument.unwrap(),
                pitch: p,
                duration: t.duration.unwrap(),
            }),
        }
    }
    for m in &mut out {
        m.retain(|_, (_, notes)| !notes.is_empty());
        m.values_mut().for_each(|(_, notes)| notes.sort());
    }
    out
}

/// Any legal token stream: BOM first, Chord and Pitch only after a Position,
/// positions possibly repeated or out of order.
fn legal_stream(rng: &mut ChaCha8Rng) -> Vec<TokenQuad> {
    let mut tokens = vec![TokenQuad::structural(Event::Bom, 0)];
    let mut group = 0;
    let mut open = false;
    for _ in 0..rng.gen_range(0..60) {
        let roll = rng.gen_range(0..10);
        if roll == 0 {
            tokens.push(TokenQuad::structural(Event::Bom, group));
            open = false;
        } else if roll <= 2 || !open {
            group += 1;
            tokens.push(TokenQuad::structural(Event::Position(rng.gen_range(0..64)), group));
            open = true;
        } else if roll == 3 {
            let c = Chord::from_id(rng.gen_range(0..24)).unwrap();
            tokens.push(TokenQuad::structural(Event::Chord(c), group));
        } else {
            let n = GridNote {
                track: rng.gen_range(0..3),
                instrument: *D2MIDI_INSTRUMENTS.choose(rng).unwrap(),
                pitch: rng.gen_range(30..90),
                duration: rng.gen_range(1..=32),
            };
            tokens.push(TokenQuad::note(&n, group));
        }
    }
    tokens
}

#[test]
fn decode_matches_reference_interpreter_on_fuzzed_streams() {
    let vocab = Vocab::complete();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..CLIPS {
        let tokens = legal_stream(&mut rng);
        let clip = decode(&tokens, &vocab, 30).unwrap();
        let got: Vec<BTreeMap<u8, (Option<Chord>, Vec<GridNote>)>> = clip
            .measures
            .iter()
            .map(|m: &Measure| m.events.iter().map(|e| (e.slot, (e.chord, e.notes.clone()))).collect())
            .collect();
        assert_eq!(got, reference_decode(&tokens), "case {case}");
    }
}

fn vlq(mut v: u64, out: &mut Vec<u8>) {
    let mut stack = vec![(v & 0x7f) as u8];
    v >>= 7;
    while v > 0 {
        stack.push((v & 0x7f) as u8 | 0x80);
        v >>= 7;
    }
    out.extend(stack.iter().rev());
}

/// Format-0 file from absolute-time (tick, on?, pitch) events on channel 0.
fn raw_smf(events: &[(u64, bool, u8)]) -> Vec<u8> {
    let mut body = Vec::new();
    let mut last = 0;
    for &(tick, on, pitch) in events {
        vlq(tick - last, &mut body);
        last = tick;
        body.extend([if on { 0x90 } else { 0x80 }, pitch, 64]);
    }
    body.extend([0x00, 0xff, 0x2f, 0x00]);
    let mut f = b"MThd".to_vec();
    f.extend(6u32.to_be_bytes());
    f.extend([0, 0, 0, 1, 0x01, 0xe0]);
    f.extend(b"MTrk");
    f.extend((body.len() as u32).to_be_bytes());
    f.extend(body);
    f
}

#[test]
fn overlapping_same_pitch_pairs_first_in_first_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        // balanced on/off stream for two pitches with deliberate overlaps
        let mut events = Vec::new();
        let mut open: BTreeMap<u8, usize> = BTreeMap::new();
        let mut tick = 0;
        for _ in 0..rng.gen_range(2..30) {
            tick += rng.gen_range(0..50u64);
            let pitch = rng.gen_range(60..62u8);
            let n = open.entry(pitch).or_default();
            let on = *n == 0 || rng.gen_bool(0.5);
            if on {
                *n += 1;
            } else {
                *n -= 1;
            }
            events.push((tick, on, pitch));
        }
        for (&pitch, &n) in &open {
            for _ in 0..n {
                tick += rng.gen_range(1..50u64);
                events.push((tick, false, pitch));
            }
        }
        // replay the stream, closing the oldest open note
        let mut queues: BTreeMap<u8, VecDeque<u64>> = BTreeMap::new();
        let mut expect = Vec::new();
        for &(t, on, pitch) in &events {
            let q = queues.entry(pitch).or_default();
            if on {
                q.push_back(t);
            } else {
                let start = q.pop_front().unwrap();
                // zero-length notes are kept as one tick
                expect.push((pitch, start, (t - start).max(1)));
            }
        }
        expect.sort();
        let clip = parse_smf(&raw_smf(&events)).unwrap();
        let mut got: Vec<(u8, u64, u64)> = clip.notes.iter().map(|n| (n.pitch, n.onset, n.duration)).collect();
        got.sort();
        assert_eq!(got, expect, "case {case}: {events:?}");
    }
}

proptest! {
    #[test]
    fn vocab_ignores_corpus_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = Vocab::complete();
        let mut corpus: Vec<Vec<TokenQuad>> = (0..5).map(|_| encode(&random_clip(&mut rng), &vocab).unwrap()).collect();
        let a = build_vocab(&corpus);
        corpus.shuffle(&mut rng);
        for seq in &mut corpus {
            seq.reverse();
        }
        prop_assert_eq!(a, build_vocab(&corpus));
    }
}
