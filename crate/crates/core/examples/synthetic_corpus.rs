//! Write a small synthetic paired corpus and look at what was planted.
//!
//!     cargo run --example synthetic_corpus -- /tmp/syn

use std::path::PathBuf;

use dance2midi::pipeline::{make_synthetic, Corpus, Split, SyntheticSpec};

fn main() {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("dance2midi-syn"));
    let spec = SyntheticSpec { clips: 20, seed: 7, ..SyntheticSpec::default() };
    let manifest = make_synthetic(&spec, &dir).expect("corpus written");
    println!("{} clips at {} bpm in {}", manifest.clips.len(), spec.bpm(), dir.display());

    let corpus = Corpus::load(&dir).expect("corpus loads");
    for split in [Split::Train, Split::Val, Split::Test] {
        println!("{split:?}: {} windows", corpus.of_split(split).len());
    }
    let s = &corpus.samples[0];
    println!(
        "{} ({}): {} frames, beats at frames {:?}",
        s.id,
        s.genre,
        s.skeleton.len(),
        &s.skeleton.beat_frames[..4]
    );
    println!("{} tokens over {} measures, {} of them drums", s.tokens.len(), s.measures, s.drums.len());
}
