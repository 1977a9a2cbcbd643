//! Train the style classifier and the drum decoder on a synthetic corpus, then
//! generate drums for the held-out dances.
//!
//!     cargo run --release --example train_drums -- 2000

use dance2midi::pipeline::*;
use dance2midi::sequence::Sampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let dir = tempfile::tempdir().expect("temp dir");
    make_synthetic(&SyntheticSpec { seed: 1, ..SyntheticSpec::default() }, dir.path()).expect("corpus written");
    let corpus = Corpus::load(dir.path()).expect("corpus loads");

    let mut cfg = Config::desk();
    cfg.train.seed = 1;
    cfg.train.steps = 300;
    let (style, _) = train_style(&corpus, &cfg).expect("style trains");
    cfg.train.steps = steps;
    let (drum, log) = train_drum(&corpus, &cfg, Some(&style)).expect("drums train");
    println!("final loss {:.4} after {steps} steps", log.losses().last().unwrap());

    let clf = StyleClassifier::from_checkpoint(&style).expect("style checkpoint");
    let gen = DrumGenerator::from_checkpoint(&drum).expect("drum checkpoint");
    let held = corpus.held_out();
    println!("style accuracy {:.3}", style_accuracy(&clf, &held).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for s in held {
        let g = gen.generate(&s.skeleton, &Sampler::default(), &mut rng).expect("generation");
        let beats: Vec<f64> = s.skeleton.beat_frames.iter().map(|&f| f as f64 / s.skeleton.fps as f64).collect();
        let f1 = beat_f1(&gen.beats(&s.skeleton).unwrap(), &s.skeleton.beat_frames, BEAT_TOLERANCE_FRAMES);
        let hit = onset_hit_rate(&g.tokens, g.bpm, &beats, 0.1).unwrap_or(0.0);
        println!("{:<10} {:<8} beat F1 {f1:.2}  {} notes at {:.0} bpm, {:.0}% on a beat", s.id, s.genre, g.notes.len(), g.bpm, 100.0 * hit);
    }
}
