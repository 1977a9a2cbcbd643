//! `dance2midi` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{
    corpus_vocab, drum_notes, layer_suites, load_checkpoint, make_synthetic, normalize_notes, save_checkpoint, split,
    tokens_of, train_bert, train_drum, train_style, Completer, Config, Corpus, CorpusManifest, DrumGenerator, LossLog,
    PipelineError, Split, SyntheticSpec, GRADCHECK_TOLERANCE,
};
use crate::metrics::{bas, bcs, evaluate_pair, report_csv, MetricReport};
use crate::midi::smf::WRITE_TICKS_PER_QUARTER;
use crate::midi::token::{from_text, to_text};
use crate::midi::{decode, parse_smf, write_smf, Event, MidiClip, Vocab};
use crate::motion::SkeletonSequence;
use crate::pipeline::corpus::{measures_for_frames, ticks_per_slot_written};

#[derive(Parser, Debug)]
#[command(name = "dance2midi", version, about = "Dance-conditioned drum generation and track completion")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Key-value config file (see README)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.batch=2 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss CSV; defaults to <out>.loss.csv
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug, Clone)]
struct SampleArgs {
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long = "top-k")]
    top_k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// MIDI file to quad-token text
    Tokenize {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep drum notes only
        #[arg(long)]
        drums_only: bool,
    },
    /// Quad-token text back to a MIDI file
    Detokenize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tempo; overrides the `bpm` header
        #[arg(long)]
        bpm: Option<f64>,
    },
    /// Write a synthetic paired corpus
    MakeSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        clips: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Frames between beats
        #[arg(long, default_value_t = 10)]
        beat_period: usize,
        #[arg(long, default_value_t = 16)]
        beats: usize,
    },
    /// Reassign train/val/test 8:1:1 per genre
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Defaults to rewriting the manifest in place
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the style classifier
    TrainStyle(TrainArgs),
    /// Train the beat head and drum decoder
    TrainDrum {
        #[command(flatten)]
        train: TrainArgs,
        /// Style checkpoint to freeze; trained first when absent
        #[arg(long)]
        style: Option<PathBuf>,
    },
    /// Pretrain the masked completion model
    TrainBert(TrainArgs),
    /// Generate drums for a skeleton clip
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the generated tokens as text
        #[arg(long)]
        tokens_out: Option<PathBuf>,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Complete the other tracks around a drum MIDI file
    Complete {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        drum: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Score generated MIDI against references, or BAS from raw beat counts
    Evaluate {
        /// Generated MIDI file or directory
        #[arg(long, requires = "reference")]
        gen: Option<PathBuf>,
        /// Reference MIDI file or directory (matched by file stem)
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Skeleton clips whose annotated beats replace the reference beats
        #[arg(long, alias = "beats")]
        dance: Option<PathBuf>,
        /// Hit window in seconds
        #[arg(long, alias = "tol")]
        tolerance: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, requires_all = ["bt", "ba"], conflicts_with = "gen")]
        bg: Option<u64>,
        #[arg(long)]
        bt: Option<u64>,
        #[arg(long)]
        ba: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference checks of every layer
    Gradcheck,
    /// Summary of a corpus
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
}

/// Parse `argv` (program name first) and run. Exit codes: 0 ok, 1 runtime failure, 2 usage.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.cmd, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<Config, PipelineError> {
    let mut cfg = match &args.config {
        Some(p) => Config::parse(&fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?)?,
        None => Config::desk(),
    };
    for o in &args.overrides {
        cfg.apply(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(t: &TrainArgs) -> Result<Config, PipelineError> {
    let mut cfg = load_config(&t.cfg)?;
    if let Some(s) = t.steps {
        cfg.train.steps = s;
    }
    if let Some(s) = t.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn sampler_config(s: &SampleArgs) -> Result<Config, PipelineError> {
    let mut cfg = load_config(&s.cfg)?;
    if let Some(t) = s.temperature {
        cfg.sampler.temperature = t;
    }
    if let Some(k) = s.top_k {
        cfg.sampler.top_k = k;
    }
    Ok(cfg)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn read_midi(path: &Path) -> Result<MidiClip, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(parse_smf(&bytes)?)
}

fn log_path(t: &TrainArgs) -> PathBuf {
    t.log.clone().unwrap_or_else(|| {
        let mut s = t.out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    })
}

fn finish_training(
    t: &TrainArgs,
    ckpt: &crate::tensor::Checkpoint,
    log: &LossLog,
    out: &mut dyn Write,
) -> Result<i32, PipelineError> {
    if let Some(dir) = t.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    save_checkpoint(&t.out, ckpt)?;
    write_file(&log_path(t), log.to_csv().as_bytes())?;
    let last = log.losses().last().copied().unwrap_or(f64::NAN);
    let _ = writeln!(out, "wrote {} after {} steps (final loss {last:.4})", t.out.display(), ckpt.step);
    Ok(0)
}

fn load_corpus(dir: &Path, err: &mut dyn Write) -> Result<Corpus, PipelineError> {
    let corpus = Corpus::load(dir)?;
    for w in &corpus.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    Ok(corpus)
}

fn dispatch(cmd: Cmd, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, PipelineError> {
    match cmd {
        Cmd::Tokenize { input, out: dest, drums_only } => {
            let clip = read_midi(&input)?;
            let mut notes = normalize_notes(&clip);
            if drums_only {
                notes = drum_notes(&notes, 0);
            }
            let tokens = tokens_of(&notes, 0)?;
            let header = vec![format!("bpm {}", clip.bpm()), format!("ticks_per_quarter {WRITE_TICKS_PER_QUARTER}")];
            let text = to_text(&tokens, &header);
            match dest {
                Some(p) => write_file(&p, text.as_bytes())?,
                None => {
                    let _ = out.write_all(text.as_bytes());
                }
            }
            Ok(0)
        }
        Cmd::Detokenize { input, out: dest, bpm } => {
            let text = fs::read_to_string(&input).map_err(|e| PipelineError::io(&input, e))?;
            let (tokens, comments) = from_text(&text)?;
            let header_bpm = comments
                .iter()
                .find_map(|c| c.strip_prefix("bpm ").and_then(|v| v.trim().parse::<f64>().ok()));
            let bpm = bpm.or(header_bpm).unwrap_or(crate::midi::smf::DEFAULT_BPM);
            let clip = decode(&tokens, &Vocab::complete(), ticks_per_slot_written())?;
            let smf = write_smf(&clip.to_notes(), bpm);
            for w in &smf.warnings {
                let _ = writeln!(err, "warning: {w}");
            }
            write_file(&dest, &smf.bytes)?;
            Ok(0)
        }
        Cmd::MakeSynth { out: dir, clips, seed, beat_period, beats } => {
            let spec = SyntheticSpec {
                clips,
                seed,
                beat_period,
                beats_per_clip: beats,
                ..SyntheticSpec::default()
            };
            let m = make_synthetic(&spec, &dir)?;
            let count = |s: Split| m.clips.iter().filter(|c| c.split == s).count();
            let _ = writeln!(
                out,
                "wrote {} clips to {} (train {}, val {}, test {}) at {} bpm",
                m.clips.len(),
                dir.display(),
                count(Split::Train),
                count(Split::Val),
                count(Split::Test),
                spec.bpm()
            );
            Ok(0)
        }
        Cmd::Split { manifest, seed, out: dest } => {
            let mut m = CorpusManifest::read(&manifest)?;
            m.clips = split(&m.clips, seed);
            m.seed = seed;
            let dest = dest.unwrap_or(manifest);
            write_file(&dest, m.to_json().as_bytes())?;
            Ok(0)
        }
        Cmd::TrainStyle(t) => {
            let cfg = train_config(&t)?;
            let corpus = load_corpus(&t.corpus, err)?;
            let (ckpt, log) = train_style(&corpus, &cfg)?;
            finish_training(&t, &ckpt, &log, out)
        }
        Cmd::TrainDrum { train: t, style } => {
            let cfg = train_config(&t)?;
            let corpus = load_corpus(&t.corpus, err)?;
            let style = style.map(|p| load_checkpoint(&p)).transpose()?;
            let (ckpt, log) = train_drum(&corpus, &cfg, style.as_ref())?;
            finish_training(&t, &ckpt, &log, out)
        }
        Cmd::TrainBert(t) => {
            let cfg = train_config(&t)?;
            let corpus = load_corpus(&t.corpus, err)?;
            let (ckpt, log) = train_bert(&corpus, &cfg)?;
            finish_training(&t, &ckpt, &log, out)
        }
        Cmd::Generate { ckpt, skeleton, out: dest, tokens_out, sample } => {
            let cfg = sampler_config(&sample)?;
            let gen = DrumGenerator::from_checkpoint(&load_checkpoint(&ckpt)?)?;
            let seq = SkeletonSequence::read(&skeleton)?;
            let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
            let g = gen.generate(&seq, &cfg.sampler, &mut rng)?;
            write_file(&dest, &write_smf(&g.notes, g.bpm).bytes)?;
            if let Some(p) = tokens_out {
                write_file(&p, to_text(&g.tokens, &[format!("bpm {}", g.bpm)]).as_bytes())?;
            }
            let _ = writeln!(
                out,
                "{} drum notes at {} bpm over {} frames",
                g.notes.len(),
                g.bpm,
                seq.len()
            );
            Ok(0)
        }
        Cmd::Complete { ckpt, drum, out: dest, sample } => {
            let cfg = sampler_config(&sample)?;
            let completer = Completer::from_checkpoint(&load_checkpoint(&ckpt)?)?;
            let clip = read_midi(&drum)?;
            let notes = drum_notes(&normalize_notes(&clip), 0);
            let end = clip.notes.iter().map(|n| n.end()).max().unwrap_or(0) as f64 / clip.ticks_per_quarter as f64;
            let frames = (end * 60.0 / clip.bpm() * crate::motion::FPS as f64).ceil() as usize;
            let drums = tokens_of(&notes, measures_for_frames(frames, clip.bpm()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
            let full = completer.complete(&drums, &cfg.sampler, &mut rng)?;
            let notes = decode(&full, &completer.model.vocab, ticks_per_slot_written())?.to_notes();
            write_file(&dest, &write_smf(&notes, clip.bpm()).bytes)?;
            let added = notes.iter().filter(|n| !n.instrument.is_drum()).count();
            let _ = writeln!(out, "{added} notes added around {} drum notes", notes.len() - added);
            Ok(0)
        }
        Cmd::Evaluate { gen, reference, dance, tolerance, out: dest, bg, bt, ba, cfg } => {
            let tol = tolerance.unwrap_or(load_config(&cfg)?.tolerance);
            if let (Some(bg), Some(bt), Some(ba)) = (bg, bt, ba) {
                let c = bcs_counts(bg, bt)?;
                let h = ba as f64 / bt as f64;
                let a = bas(c, h);
                let _ = writeln!(out, "BCS {c:.2}\nBHS {h:.2}\nBAS {a:.2}");
                let _ = writeln!(out, "# exact: BCS {c} BHS {h} BAS {a}");
                return Ok(0);
            }
            let (Some(gen), Some(reference)) = (gen, reference) else {
                return Err(PipelineError::Invalid("evaluate needs --gen and --ref, or --bg --bt --ba".into()));
            };
            let rows = evaluate_paths(&gen, &reference, dance.as_deref(), tol, err)?;
            let csv = report_csv(&rows);
            match dest {
                Some(p) => write_file(&p, csv.as_bytes())?,
                None => {
                    let _ = out.write_all(csv.as_bytes());
                }
            }
            Ok(0)
        }
        Cmd::Gradcheck => {
            let reports = layer_suites()?;
            let mut failed = 0;
            for r in &reports {
                let ok = r.passes(GRADCHECK_TOLERANCE);
                failed += (!ok) as usize;
                let _ = writeln!(
                    out,
                    "{} {} max_rel {:.3e} ({} entries)",
                    if ok { "ok  " } else { "FAIL" },
                    r.name,
                    r.max_rel_error,
                    r.entries
                );
            }
            let _ = writeln!(out, "{} checks, {failed} failed", reports.len());
            Ok(if failed == 0 { 0 } else { 1 })
        }
        Cmd::Stats { corpus } => {
            let c = load_corpus(&corpus, err)?;
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&corpus_stats(&c)?).expect("json"));
            Ok(0)
        }
    }
}

fn bcs_counts(bg: u64, bt: u64) -> Result<f64, PipelineError> {
    let gen = vec![0.0; bg as usize];
    let reference = vec![0.0; bt as usize];
    Ok(bcs(&gen, &reference)?)
}

fn midi_files(p: &Path) -> Result<BTreeMap<String, PathBuf>, PipelineError> {
    let stem = |q: &Path| q.file_stem().map(|s| s.to_string_lossy().to_string()).unwrap_or_default();
    if p.is_file() {
        return Ok(BTreeMap::from([(stem(p), p.to_path_buf())]));
    }
    let mut out = BTreeMap::new();
    for e in fs::read_dir(p).map_err(|e| PipelineError::io(p, e))? {
        let q = e.map_err(|e| PipelineError::io(p, e))?.path();
        if q.extension().is_some_and(|x| x == "mid" || x == "midi") {
            out.insert(stem(&q), q);
        }
    }
    Ok(out)
}

fn evaluate_paths(
    gen: &Path,
    reference: &Path,
    dance: Option<&Path>,
    tol: f64,
    err: &mut dyn Write,
) -> Result<Vec<(String, MetricReport)>, PipelineError> {
    let gens = midi_files(gen)?;
    let refs = midi_files(reference)?;
    let single = gens.len() == 1 && refs.len() == 1 && gen.is_file();
    let mut rows = Vec::new();
    for (id, gpath) in &gens {
        let rpath = match (single, refs.get(id)) {
            (true, _) => refs.values().next().unwrap(),
            (false, Some(r)) => r,
            (false, None) => {
                let _ = writeln!(err, "warning: no reference for {id}");
                continue;
            }
        };
        let beats = match dance {
            Some(d) => {
                let path = if d.is_file() { d.to_path_buf() } else { d.join(format!("{id}.json")) };
                let seq = SkeletonSequence::read(&path)?;
                Some(seq.beat_frames.iter().map(|&f| f as f64 / seq.fps as f64).collect::<Vec<f64>>())
            }
            None => None,
        };
        let report = evaluate_pair(&read_midi(gpath)?, &read_midi(rpath)?, beats.as_deref(), tol)
            .map_err(|e| PipelineError::Invalid(format!("clip {id}: {e}")))?;
        rows.push((id.clone(), report));
    }
    if rows.is_empty() {
        return Err(PipelineError::Invalid("no generated/reference pairs found".into()));
    }
    Ok(rows)
}

fn corpus_stats(c: &Corpus) -> Result<serde_json::Value, PipelineError> {
    let mut per: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for rec in &c.manifest.clips {
        let split = serde_json::to_value(rec.split).expect("split serializes");
        *per.entry(rec.genre.clone())
            .or_default()
            .entry(split.as_str().unwrap_or("?").to_string())
            .or_default() += 1;
    }
    let lens = |f: &dyn Fn(&super::Sample) -> usize| {
        let v: Vec<usize> = c.samples.iter().map(f).collect();
        let mean = v.iter().sum::<usize>() as f64 / v.len().max(1) as f64;
        json!({"min": v.iter().min(), "mean": mean, "max": v.iter().max()})
    };
    let vocab = corpus_vocab(c)?;
    let notes = |s: &super::Sample| s.tokens.iter().filter(|t| matches!(t.event, Event::Pitch(_))).count();
    Ok(json!({
        "clips": c.manifest.clips.len(),
        "windows": c.samples.len(),
        "fps": c.manifest.fps,
        "window": c.manifest.window,
        "stride": c.manifest.stride,
        "clips_per_genre_and_split": per,
        "tokens": lens(&|s| s.tokens.len()),
        "drum_tokens": lens(&|s| s.drums.len()),
        "notes": lens(&notes),
        "vocab_sizes": vocab.sizes(),
    }))
}
