use dance2midi::bert::{
    batch_grads, batch_loss, complete_tracks, completion_mask, measure_mask, measure_of, scaffold_of,
    train_step_bert, BertConfig, BertModel, MaskedBatch, Replacement, ScaffoldStats,
};
use dance2midi::midi::{
    build_vocab, encode, Event, Field, GridNote, Instrument, Measure, QuantizedClip, SlotEvent, TokenQuad, Vocab,
};
use dance2midi::sequence::{weighted_loss, Sampler};
use dance2midi::tensor::gradcheck::check_params;
use dance2midi::tensor::{AdamConfig, Graph, ParamStore, Schedule, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn note(track: u8, instrument: Instrument, pitch: u8, duration: u8) -> GridNote {
    GridNote {
        track,
        instrument,
        pitch,
        duration,
    }
}

/// Kick/snare on beats with a bass echo one slot later, over `measures` measures.
fn echo_clip(measures: usize, phase: u8) -> QuantizedClip {
    let bass = Instrument::Program(32);
    let mut out = Vec::new();
    for _ in 0..measures {
        let mut events = Vec::new();
        for b in 0..4u8 {
            let slot = phase + 16 * b;
            let (drum, echo) = if b % 2 == 0 { (36, 40) } else { (38, 43) };
            events.push(SlotEvent {
                slot,
                chord: None,
                notes: vec![note(0, Instrument::Drum, drum, 2)],
            });
            events.push(SlotEvent {
                slot: slot + 1,
                chord: None,
                notes: vec![note(1, bass, echo, 4)],
            });
        }
        out.push(Measure { events });
    }
    let mut clip = QuantizedClip {
        measures: out,
        ticks_per_slot: 30,
    };
    clip.canonicalize(true);
    clip
}

fn corpus_vocab() -> (Vocab, Vec<Vec<TokenQuad>>) {
    let full = Vocab::complete();
    let seqs: Vec<Vec<TokenQuad>> = (0..4).map(|p| encode(&echo_clip(3, p * 3), &full).unwrap()).collect();
    let vocab = build_vocab(&seqs);
    let seqs = (0..4).map(|p| encode(&echo_clip(3, p * 3), &vocab).unwrap()).collect();
    (vocab, seqs)
}

fn tiny(layers: usize) -> BertConfig {
    BertConfig {
        hidden: 8,
        layers,
        heads: 2,
        ff: 16,
        max_len: 256,
        max_distance: 32,
        mask_rate: 0.15,
    }
}

#[test]
fn replacement_proportions() {
    let (vocab, seqs) = corpus_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0usize; 3];
    let mut total = 0;
    while total < 100_000 {
        let b = measure_mask(&seqs[total % 4], &vocab, &mut rng, 0.15).unwrap();
        for r in b.replacements.iter().flatten() {
            counts[match r {
                Replacement::Mask => 0,
                Replacement::Random => 1,
                Replacement::Keep => 2,
            }] += 1;
            total += 1;
        }
    }
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    assert!((p[0] - 0.8).abs() <= 0.01, "{p:?}");
    assert!((p[1] - 0.1).abs() <= 0.005, "{p:?}");
    assert!((p[2] - 0.1).abs() <= 0.005, "{p:?}");
    let expected = [0.8, 0.1, 0.1].map(|q| q * total as f64);
    let chi2: f64 = counts.iter().zip(expected).map(|(&o, e)| (o as f64 - e).powi(2) / e).sum();
    // chi-square critical value, 2 degrees of freedom, alpha = 0.01
    assert!(chi2 < 9.210, "chi2 = {chi2}");
}

#[test]
fn other_fields_untouched() {
    let (vocab, seqs) = corpus_vocab();
    let original: Vec<_> = seqs[0].iter().map(|t| vocab.token_ids(t).unwrap()).collect();
    let mut seen = [false; 4];
    for seed in 0..200 {
        let b = measure_mask(&seqs[0], &vocab, &mut ChaCha8Rng::seed_from_u64(seed), 0.15).unwrap();
        let f = b.field.unwrap().index();
        seen[f] = true;
        for (i, (a, o)) in b.input.iter().zip(&original).enumerate() {
            for k in 0..4 {
                if k != f {
                    assert_eq!(a[k], o[k]);
                    assert!(b.targets[i][k].is_none());
                }
            }
        }
    }
    assert_eq!(seen, [true; 4]);
}

#[test]
fn selections_span_two_measures() {
    let (vocab, seqs) = corpus_vocab();
    let measures = measure_of(&seqs[1]);
    for seed in 0..10_000 {
        let b = measure_mask(&seqs[1], &vocab, &mut ChaCha8Rng::seed_from_u64(seed), 0.15).unwrap();
        assert!(!b.single_measure);
        let mut m: Vec<usize> = b.masked_positions().iter().map(|&i| measures[i]).collect();
        m.dedup();
        m.sort_unstable();
        m.dedup();
        assert!(m.len() >= 2, "seed {seed}");
    }
}

#[test]
fn single_measure_is_flagged() {
    let full = Vocab::complete();
    let one = encode(&echo_clip(1, 0), &full).unwrap();
    let b = measure_mask(&one, &full, &mut ChaCha8Rng::seed_from_u64(3), 0.15).unwrap();
    assert!(b.single_measure);
    assert!(!b.masked_positions().is_empty());
}

#[test]
fn selection_is_seed_deterministic() {
    let (vocab, seqs) = corpus_vocab();
    let a = measure_mask(&seqs[2], &vocab, &mut ChaCha8Rng::seed_from_u64(7), 0.15).unwrap();
    let b = measure_mask(&seqs[2], &vocab, &mut ChaCha8Rng::seed_from_u64(7), 0.15).unwrap();
    assert_eq!(a.input, b.input);
    assert_eq!(a.targets, b.targets);
}

fn model(seed: u64, layers: usize) -> (ParamStore, BertModel, Vocab, Vec<Vec<TokenQuad>>) {
    let (vocab, seqs) = corpus_vocab();
    let mut store = ParamStore::new();
    let m = BertModel::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), &tiny(layers), &vocab).unwrap();
    (store, m, vocab, seqs)
}

fn logits_at(store: &ParamStore, m: &BertModel, b: &MaskedBatch, rows: &[usize]) -> Vec<Tensor> {
    let mut g = Graph::with_params(store);
    let l = m.forward(&mut g, &b.input, &b.groups, Some(rows)).unwrap();
    l.iter().map(|v| g.value(*v).clone()).collect()
}

#[test]
fn every_token_reaches_masked_logits() {
    let (store, m, vocab, seqs) = model(1, 2);
    let b = measure_mask(&seqs[0], &vocab, &mut ChaCha8Rng::seed_from_u64(2), 0.15).unwrap();
    let rows = b.masked_positions();
    let base = logits_at(&store, &m, &b, &rows);
    for i in [0, b.input.len() / 2, b.input.len() - 1] {
        let mut p = b.clone();
        p.input[i][0] = if p.input[i][0] == 5 { 6 } else { 5 };
        let after = logits_at(&store, &m, &p, &rows);
        assert!(base.iter().zip(&after).all(|(a, b)| a.max_abs_diff(b) > 0.0), "token {i}");
    }
}

#[test]
fn single_token_shapes() {
    let (store, m, vocab, _) = model(2, 1);
    let mut g = Graph::with_params(&store);
    let bom = vocab.token_ids(&TokenQuad::structural(Event::Bom, 0)).unwrap();
    let l = m.forward(&mut g, &[bom], &[0], None).unwrap();
    for f in Field::ALL {
        let t = g.value(l[f.index()]);
        assert_eq!(t.shape(), &[1, vocab.sizes()[f.index()]]);
        assert!(t.is_finite());
    }
}

#[test]
fn weighted_loss_closed_forms() {
    let sizes = [7usize, 5, 3, 9];
    let mut g = Graph::new();
    let logits: [_; 4] = std::array::from_fn(|f| g.constant(Tensor::zeros(&[3, sizes[f]])));
    let targets = vec![[Some(1), Some(2), Some(0), Some(8)]; 3];
    let w = dance2midi::sequence::field_weights(sizes);
    let l = weighted_loss(&mut g, &logits, &targets, w).unwrap();
    let want: f64 = sizes.iter().zip(w).map(|(s, w)| w * (*s as f64).ln()).sum();
    assert!((g.value(l).data()[0] - want).abs() < 1e-9);

    // equal weights = unweighted mean of field losses
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let logits: [_; 4] = std::array::from_fn(|_| {
        g.constant(Tensor::new(&[3, 4], (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap())
    });
    let targets = vec![[Some(1), Some(2), Some(0), Some(3)]; 3];
    let l = weighted_loss(&mut g, &logits, &targets, [0.25; 4]).unwrap();
    let mut each = 0.0;
    for f in 0..4 {
        let tg: Vec<usize> = targets.iter().map(|t| t[f].unwrap() as usize).collect();
        let c = g.cross_entropy(logits[f], &tg, &[1.0 / 3.0; 3]).unwrap();
        each += g.value(c).data()[0] / 4.0;
    }
    assert!((g.value(l).data()[0] - each).abs() < 1e-12);

    // one field: scaled plain cross-entropy
    let only = vec![[None, Some(2), None, None]; 3];
    let l = weighted_loss(&mut g, &logits, &only, [0.1, 0.6, 0.2, 0.1]).unwrap();
    let c = g.cross_entropy(logits[1], &[2, 2, 2], &[1.0 / 3.0; 3]).unwrap();
    assert!((g.value(l).data()[0] - 0.6 * g.value(c).data()[0]).abs() < 1e-12);

    assert!(weighted_loss(&mut g, &logits, &[[None; 4]; 3], [0.25; 4]).is_err());
}

#[test]
fn completion_keeps_known_tokens() {
    let (store, m, vocab, seqs) = model(3, 1);
    let drums: Vec<TokenQuad> = {
        let (kept, _) = dance2midi::bert::hide_tracks(&seqs[0], &[1]);
        let mut out = Vec::new();
        let mut group = 0;
        for measure in kept {
            out.push(TokenQuad::structural(Event::Bom, group));
            for mut t in measure {
                if t.event.is_position() {
                    group += 1;
                }
                t.pos_group = group;
                out.push(t);
            }
        }
        out
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let same = complete_tracks(&store, &m, &drums, &vec![], &Sampler::default(), &mut rng).unwrap();
    assert_eq!(same, drums);
    let full_again = complete_tracks(&store, &m, &seqs[0], &vec![], &Sampler::default(), &mut rng).unwrap();
    assert_eq!(full_again, seqs[0]);

    let scaffold = scaffold_of(&seqs[0]);
    let out = complete_tracks(&store, &m, &drums, &scaffold, &Sampler::default(), &mut rng).unwrap();
    let drum_notes = |t: &[TokenQuad]| {
        let clip = dance2midi::midi::decode(t, &vocab, 30).unwrap();
        let mut v: Vec<(usize, u8, GridNote)> = Vec::new();
        for (mi, ms) in clip.measures.iter().enumerate() {
            for e in &ms.events {
                for n in &e.notes {
                    if n.instrument.is_drum() {
                        v.push((mi, e.slot, *n));
                    }
                }
            }
        }
        v
    };
    assert_eq!(drum_notes(&out), drum_notes(&drums));
    let notes_out = out.iter().filter(|t| t.event.is_pitch()).count();
    assert!(notes_out > drums.iter().filter(|t| t.event.is_pitch()).count());
}

#[test]
fn scaffold_stats_sample_known_plans() {
    let (_, _, _, seqs) = model(4, 1);
    let stats = ScaffoldStats::from_corpus(&seqs);
    let s = stats.sample(3, &mut ChaCha8Rng::seed_from_u64(2));
    assert_eq!(s.len(), 3);
    for measure in s {
        assert_eq!(measure.len(), 1);
        assert_eq!(measure[0].track, 1);
        assert_eq!(measure[0].groups, vec![1, 1, 1, 1]);
    }
}

#[test]
fn completion_targets_cover_hidden_fields() {
    let (_, _, vocab, seqs) = model(5, 1);
    let b = completion_mask(&seqs[0], &[1], &vocab).unwrap();
    assert_eq!(b.input.len(), seqs[0].len());
    let masked = b.masked_positions();
    assert_eq!(masked.len(), 3 * 8);
    for &i in &masked {
        assert_eq!(b.input[i][0], dance2midi::midi::MASK);
    }
}

#[test]
fn loss_is_deterministic_and_decreases() {
    let (mut store, m, _, seqs) = model(6, 2);
    let sched = Schedule { peak: 3e-3, warmup: 10 };
    let adam = AdamConfig::default();
    let masks: Vec<MaskedBatch> = {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        seqs.iter().map(|s| measure_mask(s, &m.vocab, &mut rng, 0.3).unwrap()).collect()
    };
    let (a, _) = batch_grads(&store, &m, &masks).unwrap();
    let (b, _) = batch_grads(&store, &m, &masks).unwrap();
    assert_eq!(a, b);
    for t in 1..=50 {
        let (_, grads) = batch_grads(&store, &m, &masks).unwrap();
        dance2midi::tensor::adam_step(&mut store, &grads, t, &sched, &adam).unwrap();
    }
    let (after, _) = batch_grads(&store, &m, &masks).unwrap();
    assert!(after < a, "{a} -> {after}");

    let mut r1 = ChaCha8Rng::seed_from_u64(4);
    let mut r2 = ChaCha8Rng::seed_from_u64(4);
    let mut s1 = store.clone();
    let mut s2 = store.clone();
    let l1 = train_step_bert(&mut s1, &m, &seqs, &mut r1, 51, &sched, &adam).unwrap();
    let l2 = train_step_bert(&mut s2, &m, &seqs, &mut r2, 51, &sched, &adam).unwrap();
    assert_eq!(l1, l2);
}

#[test]
fn two_layer_gradients() {
    let (vocab, seqs) = corpus_vocab();
    let cfg = BertConfig {
        hidden: 4,
        layers: 2,
        heads: 2,
        ff: 4,
        max_len: 64,
        max_distance: 4,
        mask_rate: 0.3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let m = BertModel::new(&mut store, &mut rng, &cfg, &vocab).unwrap();
    for id in 0..store.len() {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let short: Vec<TokenQuad> = seqs[0][..9].to_vec();
    let b = completion_mask(&short, &[1], &vocab).unwrap();
    let w = m.field_weights();
    for r in check_params("bert", &store, 1e-5, |g| batch_loss(g, &m, &b, w).map_err(|e| match e {
        dance2midi::bert::BertError::Tensor(t) => t,
        other => dance2midi::tensor::TensorError::Shape(other.to_string()),
    }))
    .unwrap()
    {
        assert!(r.passes(1e-5), "{} rel err {:.3e}", r.name, r.max_rel_error);
    }
}
