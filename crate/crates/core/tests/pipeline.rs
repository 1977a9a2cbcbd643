use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use dance2midi::metrics::evaluate_pair;
use dance2midi::midi::{parse_smf, write_smf, Instrument, Note};
use dance2midi::pipeline::cli::run_with;
use dance2midi::pipeline::*;
use proptest::prelude::*;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("dance2midi").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn window_counts() {
    assert_eq!(sliding_window(600, 600, 40).spans, vec![(0, 600)]);
    let w = sliding_window(680, 600, 40);
    assert_eq!(w.spans.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 40, 80]);
    let short = sliding_window(599, 600, 40);
    assert!(short.spans.is_empty() && short.warning.is_some());
    assert_eq!((DEFAULT_WINDOW, DEFAULT_STRIDE), (600, 40));
}

fn records(n: usize, genres: usize) -> Vec<ClipRecord> {
    (0..n)
        .map(|i| ClipRecord {
            id: format!("c{i:03}"),
            skeleton: PathBuf::from(format!("clips/c{i:03}.json")),
            midi: PathBuf::from(format!("midi/c{i:03}.mid")),
            genre: format!("g{}", i % genres),
            split: Split::Train,
        })
        .collect()
}

#[test]
fn ten_clips_split_eight_one_one() {
    let out = split(&records(10, 1), 3);
    let count = |s: Split| out.iter().filter(|r| r.split == s).count();
    assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (8, 1, 1));
    assert_eq!(out, split(&records(10, 1), 3));
}

proptest! {
    #[test]
    fn window_count_formula(frames in 0usize..3000, window in 1usize..800, stride in 1usize..100) {
        let w = sliding_window(frames, window, stride);
        if frames < window {
            prop_assert!(w.spans.is_empty());
        } else {
            prop_assert_eq!(w.spans.len(), (frames - window) / stride + 1);
            prop_assert!(w.spans.iter().enumerate().all(|(k, &(a, b))| a == k * stride && b == a + window && b <= frames));
        }
    }

    #[test]
    fn splits_partition_the_input(n in 1usize..60, genres in 1usize..4, seed in any::<u64>()) {
        let input = records(n, genres);
        let out = split(&input, seed);
        let ids_in: BTreeSet<_> = input.iter().map(|r| r.id.clone()).collect();
        let ids_out: BTreeSet<_> = out.iter().map(|r| r.id.clone()).collect();
        prop_assert_eq!(out.len(), input.len());
        prop_assert_eq!(ids_in, ids_out);
        // each record lands in exactly one split, genre untouched
        for (a, b) in input.iter().zip(&out) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(&a.genre, &b.genre);
        }
    }
}

#[test]
fn synthetic_pairs_are_self_consistent() {
    let spec = SyntheticSpec { clips: 4, seed: 5, ..SyntheticSpec::default() };
    assert_eq!(spec.bpm(), 120.0);
    for clip in synth_clips(&spec).unwrap() {
        let midi = parse_smf(&write_smf(&clip.notes, spec.bpm()).bytes).unwrap();
        let secs = |n: &Note| n.onset as f64 / midi.ticks_per_quarter as f64 * 60.0 / spec.bpm();
        let drums: Vec<f64> = midi.notes.iter().filter(|n| n.instrument.is_drum()).map(secs).collect();
        assert_eq!(drums.len(), spec.beats_per_clip);
        assert!(drums.windows(2).all(|w| (w[1] - w[0] - 0.5).abs() < 1e-9));
        let beats: Vec<f64> = clip.skeleton.beat_frames.iter().map(|&f| f as f64 / 20.0).collect();
        let r = evaluate_pair(&midi, &midi, Some(&beats), 0.1).unwrap();
        assert_eq!(r.bas, 1.0, "{}", clip.id);
        // the echo trails each drum hit by one slot
        let echo: Vec<f64> = midi.notes.iter().filter(|n| n.instrument == Instrument::Program(32)).map(secs).collect();
        assert_eq!(echo.len(), drums.len());
        assert!(echo.iter().zip(&drums).all(|(e, d)| (e - d - 0.5 / 16.0).abs() < 1e-9));
    }
}

#[test]
fn tokenize_then_detokenize_reproduces_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let note = |pitch, slot: u64, track, instrument| Note {
        pitch,
        onset: slot * 30,
        duration: 4 * 30,
        track,
        instrument,
        velocity: 100,
    };
    let mut notes = Vec::new();
    for k in 0..8 {
        notes.push(note(36 + (k % 2) as u8 * 2, k * 16, 0, Instrument::Drum));
        notes.push(note(60, k * 16 + 2, 1, Instrument::Program(0)));
        notes.push(note(64, k * 16 + 2, 1, Instrument::Program(0)));
        notes.push(note(67, k * 16 + 2, 1, Instrument::Program(0)));
    }
    let src = dir.path().join("in.mid");
    fs::write(&src, write_smf(&notes, 100.0).bytes).unwrap();
    let txt = dir.path().join("in.tok");
    let back = dir.path().join("back.mid");
    assert_eq!(cli(&["tokenize", s(&src), "--out", s(&txt)]).0, 0);
    assert!(fs::read_to_string(&txt).unwrap().contains("bpm 100"));
    assert_eq!(cli(&["detokenize", s(&txt), "--out", s(&back)]).0, 0);
    assert_eq!(fs::read(&src).unwrap(), fs::read(&back).unwrap());
}

#[test]
fn gradcheck_subcommand_passes() {
    let (code, out, _) = cli(&["gradcheck"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains(", 0 failed"));
}

#[test]
fn evaluate_from_beat_counts() {
    let (code, out, _) = cli(&["evaluate", "--bg", "73", "--bt", "100", "--ba", "53"]);
    assert_eq!(code, 0);
    assert!(out.lines().any(|l| l == "BAS 0.65"), "{out}");
    assert!(out.lines().any(|l| l == "BCS 0.73"));
}

#[test]
fn exit_codes() {
    let (code, _, err) = cli(&["tokenize", "--no-such-flag"]);
    assert_eq!(code, 2);
    assert!(err.contains("Usage"));
    assert_eq!(cli(&["--help"]).0, 0);
    let (code, _, err) = cli(&["tokenize", "/nonexistent/file.mid"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error: io:"), "{err}");
    let (code, _, err) = cli(&["evaluate", "--bg", "1", "--bt", "0", "--ba", "0"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error: metrics:"), "{err}");
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn subcommands_are_deterministic() {
    let tiny = ["--set", "train.batch=1", "--steps", "3", "--seed", "4"];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        let corpus = d.join("syn");
        assert_eq!(cli(&["make-synth", "--out", s(&corpus), "--clips", "20", "--seed", "2"]).0, 0);
        let style = d.join("ck/style.ckpt");
        let drum = d.join("ck/drum.ckpt");
        let bert = d.join("ck/bert.ckpt");
        let mut args = vec!["train-style", "--corpus", s(&corpus), "--out", s(&style)];
        args.extend(tiny);
        assert_eq!(cli(&args).0, 0);
        let mut args = vec!["train-drum", "--corpus", s(&corpus), "--out", s(&drum), "--style", s(&style)];
        args.extend(tiny);
        assert_eq!(cli(&args).0, 0);
        let mut args = vec!["train-bert", "--corpus", s(&corpus), "--out", s(&bert)];
        args.extend(tiny);
        assert_eq!(cli(&args).0, 0);
        let skel = corpus.join("clips/synth_0000.json");
        let gen = d.join("out/gen.mid");
        let (code, _, err) = cli(&["generate", "--ckpt", s(&drum), "--skeleton", s(&skel), "--out", s(&gen), "--seed", "9"]);
        assert_eq!(code, 0, "{err}");
        let full = d.join("out/full.mid");
        let (code, _, err) = cli(&["complete", "--ckpt", s(&bert), "--drum", s(&gen), "--out", s(&full), "--seed", "9"]);
        assert_eq!(code, 0, "{err}");
        let resplit = d.join("resplit.json");
        assert_eq!(cli(&["split", "--manifest", s(&corpus.join("manifest.json")), "--seed", "8", "--out", s(&resplit)]).0, 0);
        let stats = cli(&["stats", "--corpus", s(&corpus)]);
        runs.push((tree(d), stats.1));
    }
    assert_eq!(runs[0].0.len(), runs[1].0.len());
    for (a, b) in runs[0].0.iter().zip(&runs[1].0) {
        assert_eq!(a.0, b.0);
        assert!(a.1 == b.1, "{} differs between runs", a.0.display());
    }
    assert_eq!(runs[0].1, runs[1].1);
}

#[test]
fn end_to_end_smoke() {
    let started = std::time::Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let corpus = d.join("syn");
    assert_eq!(cli(&["make-synth", "--out", s(&corpus), "--clips", "20", "--seed", "1"]).0, 0);
    let drum = d.join("drum.ckpt");
    let (code, out, err) = cli(&["train-drum", "--corpus", s(&corpus), "--out", s(&drum), "--steps", "500"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("after 500 steps"));
    let log = fs::read_to_string(d.join("drum.ckpt.loss.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,lr,loss,beat_loss,drum_loss");
    assert_eq!(log.lines().count(), 501);
    let bert = d.join("bert.ckpt");
    assert_eq!(cli(&["train-bert", "--corpus", s(&corpus), "--out", s(&bert), "--steps", "200"]).0, 0);

    let gen_dir = d.join("gen");
    let full_dir = d.join("full");
    let manifest = CorpusManifest::read(&corpus.join("manifest.json")).unwrap();
    let test: Vec<&ClipRecord> = manifest.of_split(Split::Test).collect();
    assert!(!test.is_empty());
    for rec in &test {
        let gen = gen_dir.join(format!("{}.mid", rec.id));
        let skel = corpus.join(&rec.skeleton);
        let (code, _, err) = cli(&["generate", "--ckpt", s(&drum), "--skeleton", s(&skel), "--out", s(&gen)]);
        assert_eq!(code, 0, "{err}");
        let full = full_dir.join(format!("{}.mid", rec.id));
        let (code, _, err) = cli(&["complete", "--ckpt", s(&bert), "--drum", s(&gen), "--out", s(&full)]);
        assert_eq!(code, 0, "{err}");
    }
    let report = d.join("report.csv");
    let (code, _, err) = cli(&[
        "evaluate",
        "--gen",
        s(&full_dir),
        "--ref",
        s(&corpus.join("midi")),
        "--beats",
        s(&corpus.join("clips")),
        "--tol",
        "0.1",
        "--out",
        s(&report),
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "clip_id,Bg,Bt,Ba,BCS,BHS,BAS,PHE,GS");
    assert_eq!(lines.len(), test.len() + 2);
    assert!(lines.last().unwrap().starts_with("mean,"));
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 9);
        let bas: f64 = l.split(',').nth(6).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&bas));
    }
    assert!(started.elapsed().as_secs() < 600);
}
