use dance2midi::metrics::*;
use dance2midi::midi::{write_smf, parse_smf, Instrument, MidiClip, Note};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximum bipartite matching by augmenting paths, with an edge wherever
/// |g - r| <= tol. Independent of the sweep used by the library.
fn max_matching(gen: &[f64], reference: &[f64], tol: f64) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none() || augment(owner[v].unwrap(), adj, seen, owner) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let adj: Vec<Vec<usize>> = gen
        .iter()
        .map(|g| (0..reference.len()).filter(|&j| (reference[j] - g).abs() <= tol + 1e-12).collect())
        .collect();
    let mut owner = vec![None; reference.len()];
    (0..gen.len())
        .filter(|&u| augment(u, &adj, &mut vec![false; reference.len()], &mut owner))
        .count()
}

fn sorted_times(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<f64> {
    // quantized to 10 ms so exact-tolerance ties occur
    let mut v: Vec<f64> = (0..n).map(|_| (rng.gen_range(0.0..span) * 100.0).round() / 100.0).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn hit_count_equals_maximum_matching() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        let (ng, nr) = (rng.gen_range(0..12), rng.gen_range(1..12));
        let gen = sorted_times(&mut rng, ng, 4.0);
        let reference = sorted_times(&mut rng, nr, 4.0);
        let tol = [0.05, 0.1, 0.25][case % 3];
        let expect = max_matching(&gen, &reference, tol);
        assert_eq!(matched_beats(&gen, &reference, tol), expect, "case {case}");
        let h = bhs(&gen, &reference, tol).unwrap();
        assert!((h - expect as f64 / reference.len() as f64).abs() < 1e-15);
    }
}

#[test]
fn empty_reference_and_bad_tolerance_are_errors() {
    assert_eq!(bcs(&[1.0], &[]), Err(MetricError::EmptyReference));
    assert_eq!(bhs(&[1.0], &[], 0.1), Err(MetricError::EmptyReference));
    assert_eq!(bhs(&[1.0], &[1.0], 0.0), Err(MetricError::Tolerance(0.0)));
}

#[test]
fn entropy_and_groove_closed_forms() {
    let bar: Vec<u8> = (60..72).collect();
    assert!((phe(&[bar]).unwrap() - 12f64.log2()).abs() < 1e-9);
    assert_eq!(phe(&[vec![60, 72, 84]]).unwrap(), 0.0);
    assert_eq!(phe(&[vec![], vec![]]), Err(MetricError::NoNotes));

    let mut a = [false; 64];
    for i in (0..64).step_by(2) {
        a[i] = true;
    }
    let mut b = a;
    assert_eq!(gs(&[a, b]).unwrap(), 1.0);
    for i in 0..64 {
        b[i] = !a[i];
    }
    // every slot disagrees
    assert_eq!(gs(&[a, b]).unwrap(), 0.0);
    let mut c = [false; 64];
    c[..32].iter_mut().for_each(|x| *x = true);
    let d = [true; 64];
    assert!((gs(&[c, d]).unwrap() - 0.5).abs() < 1e-12);
    assert_eq!(gs(&[c, [false; 64]]), Err(MetricError::TooFewBars(1)));
}

fn note(pitch: u8, onset: u64, instrument: Instrument) -> Note {
    Note {
        pitch,
        onset,
        duration: 60,
        track: if instrument.is_drum() { 0 } else { 1 },
        instrument,
        velocity: 100,
    }
}

/// Beats at 120 bpm with a bass line on top, written and parsed back.
fn clip(shift_slots: u64, transpose: u8) -> MidiClip {
    let mut notes = Vec::new();
    for k in 0..16u64 {
        let onset = (k * 16 + shift_slots) * 30;
        notes.push(note(36 + (k % 2) as u8 * 2, onset, Instrument::Drum));
        notes.push(note(40 + transpose + (k % 5) as u8, onset + 30, Instrument::Program(32)));
    }
    parse_smf(&write_smf(&notes, 120.0).bytes).unwrap()
}

#[test]
fn reference_against_itself_scores_one() {
    let c = clip(0, 0);
    let r = evaluate_pair(&c, &c, None, DEFAULT_TOLERANCE).unwrap();
    assert_eq!((r.bcs, r.bhs, r.bas), (1.0, 1.0, 1.0));
    assert_eq!(r.bg, r.ba);
    assert!(r.phe.is_some() && r.gs.is_some());
}

#[test]
fn octave_transposition_changes_nothing() {
    let a = evaluate_pair(&clip(0, 0), &clip(0, 0), None, 0.1).unwrap();
    let b = evaluate_pair(&clip(0, 12), &clip(0, 0), None, 0.1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn common_shift_keeps_beat_scores() {
    let a = evaluate_pair(&clip(0, 0), &clip(0, 0), None, 0.1).unwrap();
    let b = evaluate_pair(&clip(3, 0), &clip(3, 0), None, 0.1).unwrap();
    assert_eq!((a.bcs, a.bhs, a.bas), (b.bcs, b.bhs, b.bas));
}

#[test]
fn silent_generation_has_no_beats() {
    let silent = parse_smf(&write_smf(&[], 120.0).bytes).unwrap();
    let r = evaluate_pair(&silent, &clip(0, 0), None, 0.1).unwrap();
    assert_eq!((r.bg, r.ba, r.bcs, r.bhs), (0, 0, 0.0, 0.0));
    assert!((r.bas - 0.5 * (-1f64).exp()).abs() < 1e-15);
    assert_eq!((r.phe, r.gs), (None, None));
    assert_eq!(
        evaluate_pair(&clip(0, 0), &silent, None, 0.1),
        Err(MetricError::EmptyReference)
    );
}

#[test]
fn dance_beats_replace_detected_ones() {
    let c = clip(0, 0);
    let half: Vec<f64> = (0..8).map(|k| k as f64).collect();
    let r = evaluate_pair(&c, &c, Some(&half), 0.1).unwrap();
    assert_eq!(r.bt, 8);
    assert_eq!(r.ba, 8);
}

#[test]
fn corpus_mean_row() {
    let a = evaluate_pair(&clip(0, 0), &clip(0, 0), None, 0.1).unwrap();
    let silent = parse_smf(&write_smf(&[], 120.0).bytes).unwrap();
    let b = evaluate_pair(&silent, &clip(0, 0), None, 0.1).unwrap();
    let (_, _, _, c, h, s, p, g) = mean_report(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(c, 0.5);
    assert_eq!(h, 0.5);
    assert!((s - (a.bas + b.bas) / 2.0).abs() < 1e-15);
    // optional metrics average over the clips that define them
    assert_eq!(p, a.phe);
    assert_eq!(g, a.gs);
    let csv = report_csv(&[("a".into(), a), ("b".into(), b)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "clip_id,Bg,Bt,Ba,BCS,BHS,BAS,PHE,GS");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("mean,"));
    assert!(lines[2].ends_with(",,"));
}

proptest! {
    #[test]
    fn bas_stays_in_unit_interval(c in 0.0f64..5.0, h in 0.0f64..1.0) {
        let a = bas(c, h);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn groove_similarity_is_symmetric(a in proptest::array::uniform32(any::<bool>()), b in proptest::array::uniform32(any::<bool>())) {
        let mut x = [false; 64];
        let mut y = [false; 64];
        x[..32].copy_from_slice(&a);
        y[32..].copy_from_slice(&b);
        x[63] = true;
        y[0] = true;
        prop_assert_eq!(gs(&[x, y]).unwrap(), gs(&[y, x]).unwrap());
    }
}
