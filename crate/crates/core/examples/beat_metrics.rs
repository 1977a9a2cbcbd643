//! Beat coverage, hit and average scores on a reference against shifted and
//! thinned copies of itself.
//!
//!     cargo run --example beat_metrics

use dance2midi::metrics::{bas, evaluate_pair, report_csv, DEFAULT_TOLERANCE};
use dance2midi::midi::{parse_smf, write_smf, Instrument, Note};

fn clip(shift_ticks: u64, every: u64) -> dance2midi::midi::MidiClip {
    let notes: Vec<Note> = (0..16u64)
        .filter(|k| k % every == 0)
        .flat_map(|k| {
            let onset = k * 480 + shift_ticks;
            [
                Note { pitch: 36, onset, duration: 60, track: 0, instrument: Instrument::Drum, velocity: 100 },
                Note { pitch: 48 + (k % 7) as u8, onset, duration: 240, track: 1, instrument: Instrument::Program(32), velocity: 100 },
            ]
        })
        .collect();
    parse_smf(&write_smf(&notes, 120.0).bytes).expect("own output parses")
}

fn main() {
    let reference = clip(0, 1);
    let rows: Vec<(String, _)> = [("same", clip(0, 1)), ("late 60ms", clip(58, 1)), ("late 250ms", clip(240, 1)), ("half", clip(0, 2))]
        .into_iter()
        .map(|(name, g)| (name.to_string(), evaluate_pair(&g, &reference, None, DEFAULT_TOLERANCE).expect("reference has beats")))
        .collect();
    print!("{}", report_csv(&rows));
    println!("BAS from counts 73/100 generated, 53 aligned: {:.2}", bas(0.73, 0.53));
}
