//! Pretrain the masked model on a synthetic corpus and write back the echo
//! track around held-out drum parts.
//!
//!     cargo run --release --example complete_tracks -- 8000

use dance2midi::pipeline::*;
use dance2midi::sequence::Sampler;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let dir = tempfile::tempdir().expect("temp dir");
    make_synthetic(&SyntheticSpec { seed: 1, ..SyntheticSpec::default() }, dir.path()).expect("corpus written");
    let corpus = Corpus::load(dir.path()).expect("corpus loads");

    let mut cfg = Config::desk();
    cfg.train.seed = 1;
    cfg.train.steps = steps;
    let (ckpt, log) = train_bert(&corpus, &cfg).expect("training");
    println!("final loss {:.4} after {steps} steps", log.losses().last().unwrap());
    let completer = Completer::from_checkpoint(&ckpt).expect("checkpoint");

    let held = corpus.held_out();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let acc = completion_accuracy(&completer, &held, &Sampler::GREEDY, &mut rng).expect("completion");
    println!("hidden-track token accuracy {acc:.3}");

    // free completion: the scaffold is sampled, not taken from the reference
    let s = held[0];
    let full = completer.complete(&s.drums, &Sampler::GREEDY, &mut rng).expect("completion");
    let added = full.iter().filter(|t| t.track.is_some_and(|tr| tr != 0)).count();
    println!("{}: {} drum tokens in, {} tokens out, {added} new notes", s.id, s.drums.len(), full.len());
}
