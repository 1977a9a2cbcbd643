//! Notes to a MIDI file and back, then onto the slot grid and into quad tokens.
//!
//!     cargo run --example codec_roundtrip

use dance2midi::midi::token::to_text;
use dance2midi::midi::{build_vocab, decode, encode, parse_smf, quantize, write_smf, Instrument, Note, Vocab};

fn main() {
    let note = |pitch, slot: u64, track, instrument| Note {
        pitch,
        onset: slot * 30,
        duration: 120,
        track,
        instrument,
        velocity: 100,
    };
    let mut notes = Vec::new();
    for beat in 0..8 {
        notes.push(note(if beat % 2 == 0 { 36 } else { 38 }, beat * 16, 0, Instrument::Drum));
    }
    // a C major triad on the first beat of each bar
    for bar in 0..2 {
        for p in [60, 64, 67] {
            notes.push(note(p, bar * 64, 1, Instrument::Program(0)));
        }
    }

    let smf = write_smf(&notes, 110.0);
    let clip = parse_smf(&smf.bytes).expect("own output parses");
    println!("{} bytes, {} notes back at {} bpm", smf.bytes.len(), clip.notes.len(), clip.bpm());

    let grid = quantize(&clip.notes, 30);
    let tokens = encode(&grid, &Vocab::complete()).expect("complete vocabulary");
    print!("{}", to_text(&tokens, &["bpm 110".into()]));

    let vocab = build_vocab(&[tokens.clone()]);
    println!("vocabulary sizes (event, duration, track, instrument): {:?}", vocab.sizes());
    let back = decode(&tokens, &vocab, 30).expect("own tokens decode");
    assert_eq!(back, grid);
    assert_eq!(back.to_notes().len(), notes.len());
    println!("decode(encode(grid)) == grid");
}
