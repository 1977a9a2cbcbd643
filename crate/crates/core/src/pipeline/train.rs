//! Training loops, checkpoint bundles and the inference wrappers built on them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::config::Config;
use super::corpus::{measures_for_frames, ticks_per_slot_written, tokens_of, Corpus, Sample, Split};
use super::eval::beat_peaks;
use super::PipelineError;
use crate::bert::{complete_tracks, train_step_bert, BertConfig, BertModel, ScaffoldStats};
use crate::drum::{generate, DrumConfig, DrumModel, Sampler};
use crate::midi::{build_vocab, decode, Event, Note, TokenQuad, Vocab, SLOTS_PER_MEASURE};
use crate::motion::{augment_affine, genre_index, MotionConfig, MotionEncoder, MotionGraph, SkeletonSequence};
use crate::tensor::{adam_step, Checkpoint, Graph, ParamGrads, ParamStore, Tensor, TensorError};

/// Per-step training log, written as CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LossLog {
    fn new(extra: &[&str]) -> Self {
        let mut columns = vec!["step".to_string(), "lr".to_string(), "loss".to_string()];
        columns.extend(extra.iter().map(|s| s.to_string()));
        LossLog { columns, rows: Vec::new() }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[2]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 { format!("{}", *v as u64) } else { format!("{v}") })
                .collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), PipelineError> {
    fs::write(path, ckpt.to_bytes(false)).map_err(|e| PipelineError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config types serialize")
}

fn meta_json<T: DeserializeOwned>(ckpt: &Checkpoint, key: &str) -> Result<T, PipelineError> {
    let raw = ckpt
        .meta(key)
        .ok_or_else(|| PipelineError::Invalid(format!("checkpoint has no `{key}` entry")))?;
    serde_json::from_str(raw).map_err(|e| PipelineError::Invalid(format!("checkpoint `{key}`: {e}")))
}

fn expect_kind(ckpt: &Checkpoint, kind: &str) -> Result<(), PipelineError> {
    match ckpt.meta("kind") {
        Some(k) if k == kind => Ok(()),
        other => Err(PipelineError::Invalid(format!(
            "expected a {kind} checkpoint, found {}",
            other.unwrap_or("an unlabeled one")
        ))),
    }
}

/// Copy every parameter of `src` into the same-named slot of `dst`.
fn copy_params(dst: &mut ParamStore, src: &ParamStore) -> Result<(), PipelineError> {
    for (i, name) in src.names().iter().enumerate() {
        let id = dst
            .id(name)
            .ok_or_else(|| TensorError::UnknownParam(format!("{name} (not part of the model)")))?;
        if dst.value(id).shape() != src.value(i).shape() {
            return Err(TensorError::Shape(format!("checkpoint tensor {name} has the wrong shape")).into());
        }
        *dst.value_mut(id) = src.value(i).clone();
    }
    Ok(())
}

/// Parameters whose names start with any of `prefixes`, names kept.
fn subset(store: &ParamStore, prefixes: &[&str]) -> ParamStore {
    let mut out = ParamStore::new();
    for p in prefixes {
        out.absorb(p, &store.extract(p)).expect("prefixes are disjoint");
    }
    out
}

fn require_all(store: &ParamStore, ckpt: &ParamStore) -> Result<(), PipelineError> {
    match store.names().iter().find(|n| ckpt.id(n).is_none()) {
        Some(n) => Err(TensorError::UnknownParam(format!("{n} missing from checkpoint")).into()),
        None => Ok(()),
    }
}

struct Graphs(BTreeMap<usize, MotionGraph>);

impl Graphs {
    fn get(&mut self, joints: usize) -> Result<&MotionGraph, PipelineError> {
        if !self.0.contains_key(&joints) {
            self.0.insert(joints, MotionGraph::for_joints(joints)?);
        }
        Ok(&self.0[&joints])
    }
}

fn train_samples<'a>(corpus: &'a Corpus) -> Result<Vec<&'a Sample>, PipelineError> {
    let s = corpus.of_split(Split::Train);
    if s.is_empty() {
        return Err(PipelineError::Invalid("corpus has no training windows".into()));
    }
    Ok(s)
}

fn pick<'a, T>(items: &[&'a T], n: usize, rng: &mut impl Rng) -> Vec<&'a T> {
    (0..n).map(|_| items[rng.gen_range(0..items.len())]).collect()
}

/// Shared vocabulary: every value seen in the training windows plus the whole
/// position grid, which phase shifts can reach.
pub fn corpus_vocab(corpus: &Corpus) -> Result<Vocab, PipelineError> {
    let seqs: Vec<Vec<TokenQuad>> = train_samples(corpus)?.iter().map(|s| s.tokens.clone()).collect();
    let mut vocab = build_vocab(&seqs);
    vocab.events.extend((0..SLOTS_PER_MEASURE as u8).map(Event::Position));
    vocab.events.sort();
    vocab.events.dedup();
    Ok(vocab)
}

/// Genre classifier: the style branch of the motion encoder.
#[derive(Clone, Debug)]
pub struct StyleClassifier {
    pub encoder: MotionEncoder,
    pub store: ParamStore,
}

impl StyleClassifier {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PipelineError> {
        let kind = ckpt.meta("kind").unwrap_or("");
        if kind != "style" && kind != "drum" {
            return Err(PipelineError::Invalid(format!("expected a style or drum checkpoint, found `{kind}`")));
        }
        let cfg: MotionConfig = meta_json(ckpt, "motion")?;
        let mut store = ParamStore::new();
        let encoder = MotionEncoder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), &cfg)?;
        require_all(&subset(&store, &["style."]), &ckpt.params)?;
        copy_params(&mut store, &subset(&ckpt.params, &["style."]))?;
        Ok(StyleClassifier { encoder, store })
    }

    /// Genre logits for one clip.
    pub fn logits(&self, seq: &SkeletonSequence) -> Result<Vec<f64>, PipelineError> {
        let graph = MotionGraph::for_joints(seq.joints)?;
        let mut g = Graph::with_params(&self.store);
        let (_, logits) = self.encoder.style_forward(&mut g, seq, &graph)?;
        Ok(g.value(logits).data().to_vec())
    }

    pub fn predict(&self, seq: &SkeletonSequence) -> Result<usize, PipelineError> {
        let l = self.logits(seq)?;
        Ok((0..l.len()).max_by(|&a, &b| l[a].total_cmp(&l[b]).then(b.cmp(&a))).unwrap_or(0))
    }
}

fn genre_of(s: &Sample) -> Result<usize, PipelineError> {
    genre_index(&s.genre).ok_or_else(|| PipelineError::Invalid(format!("clip {}: unknown genre `{}`", s.id, s.genre)))
}

/// Train the style branch as a genre classifier.
pub fn train_style(corpus: &Corpus, cfg: &Config) -> Result<(Checkpoint, LossLog), PipelineError> {
    cfg.validate()?;
    let tc = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut store = ParamStore::new();
    let encoder = MotionEncoder::new(&mut store, &mut rng, &cfg.motion)?;
    let samples = train_samples(corpus)?;
    let labels: BTreeMap<&str, usize> = samples
        .iter()
        .map(|s| Ok((s.id.as_str(), genre_of(s)?)))
        .collect::<Result<_, PipelineError>>()?;
    let mut graphs = Graphs(BTreeMap::new());
    let mut log = LossLog::new(&[]);
    for t in 1..=tc.steps as u64 {
        let batch = pick(&samples, tc.batch, &mut rng);
        let mut grads = ParamGrads::zeros_like(&store);
        let mut total = 0.0;
        for s in &batch {
            let seq = if tc.augment { augment_affine(&s.skeleton, &mut rng) } else { s.skeleton.clone() };
            let graph = graphs.get(seq.joints)?;
            let mut g = Graph::with_params(&store);
            let (_, logits) = encoder.style_forward(&mut g, &seq, graph)?;
            let loss = g.cross_entropy(logits, &[labels[s.id.as_str()]], &[1.0])?;
            total += g.value(loss).data()[0];
            grads.accumulate(&g.backward(loss)?.params(&store));
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        adam_step(&mut store, &grads, t, &tc.schedule, &tc.adam)?;
        log.rows.push(vec![t as f64, tc.schedule.lr(t), total * scale]);
    }
    let ckpt = Checkpoint {
        step: tc.steps as u64,
        meta: vec![
            ("kind".into(), "style".into()),
            ("motion".into(), json(&cfg.motion)),
            ("seed".into(), tc.seed.to_string()),
        ],
        params: subset(&store, &["style."]),
    };
    Ok((ckpt, log))
}

/// Train the beat head and the drum decoder together on top of a frozen style
/// branch. Without a style checkpoint the style branch is trained first with
/// the same budget.
pub fn train_drum(corpus: &Corpus, cfg: &Config, style: Option<&Checkpoint>) -> Result<(Checkpoint, LossLog), PipelineError> {
    cfg.validate()?;
    let style_ckpt = match style {
        Some(c) => c.clone(),
        None => train_style(corpus, cfg)?.0,
    };
    let style_cfg: MotionConfig = meta_json(&style_ckpt, "motion")?;
    if style_cfg.style_channels != cfg.motion.style_channels
        || style_cfg.style_hidden != cfg.motion.style_hidden
        || style_cfg.style_dim != cfg.motion.style_dim
        || style_cfg.genres != cfg.motion.genres
    {
        return Err(PipelineError::Config("style checkpoint was trained with a different style branch".into()));
    }
    let tc = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5eed_d2);
    let vocab = corpus_vocab(corpus)?;
    let mut store = ParamStore::new();
    let encoder = MotionEncoder::new(&mut store, &mut rng, &cfg.motion)?;
    let model = DrumModel::new(&mut store, &mut rng, &cfg.drum, &vocab)?;
    copy_params(&mut store, &subset(&style_ckpt.params, &["style."]))?;
    store.freeze_prefix("style.");
    let weights = model.field_weights();

    let samples = train_samples(corpus)?;
    let mut graphs = Graphs(BTreeMap::new());
    let mut styles: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in &samples {
        let graph = graphs.get(s.skeleton.joints)?;
        let mut g = Graph::with_params(&store);
        let (zs, _) = encoder.style_forward(&mut g, &s.skeleton, graph)?;
        styles.insert(s.id.as_str(), g.value(zs).data().to_vec());
    }

    let mut log = LossLog::new(&["beat_loss", "drum_loss"]);
    for t in 1..=tc.steps as u64 {
        let batch = pick(&samples, tc.batch, &mut rng);
        let mut grads = ParamGrads::zeros_like(&store);
        let (mut beat_total, mut drum_total) = (0.0, 0.0);
        for s in &batch {
            let (seq, drums) = if tc.augment { shift_crop(s, &mut rng)? } else { (s.skeleton.clone(), s.drums.clone()) };
            let beats = seq.beat_vector();
            let seq = if tc.augment { augment_affine(&seq, &mut rng) } else { seq };
            let graph = graphs.get(seq.joints)?;
            let mut g = Graph::with_params(&store);
            let logits = encoder.beat_logits(&mut g, &seq, graph)?;
            let beat_loss = encoder.beat.loss(&mut g, logits, &beats)?;
            let z = encoder.fuse.forward(&mut g, &beats, &styles[s.id.as_str()])?;
            let drum_loss = model.loss(&mut g, z, &drums, s.bpm, weights)?;
            beat_total += g.value(beat_loss).data()[0];
            drum_total += g.value(drum_loss).data()[0];
            let loss = g.add(beat_loss, drum_loss)?;
            grads.accumulate(&g.backward(loss)?.params(&store));
        }
        let scale = 1.0 / batch.len() as f64;
        grads.scale(scale);
        adam_step(&mut store, &grads, t, &tc.schedule, &tc.adam)?;
        let (b, d) = (beat_total * scale, drum_total * scale);
        log.rows.push(vec![t as f64, tc.schedule.lr(t), b + d, b, d]);
    }
    let ckpt = Checkpoint {
        step: tc.steps as u64,
        meta: vec![
            ("kind".into(), "drum".into()),
            ("motion".into(), json(&cfg.motion)),
            ("drum".into(), json(&cfg.drum)),
            ("vocab".into(), json(&vocab)),
            ("seed".into(), tc.seed.to_string()),
        ],
        params: store,
    };
    Ok((ckpt, log))
}

/// Tokens of `tokens` with the first `k` slots cut off and everything after
/// moved earlier by `k` slots, over `measures` measures.
fn shift_tokens(tokens: &[TokenQuad], k: u64, measures: usize) -> Result<Vec<TokenQuad>, PipelineError> {
    let tps = ticks_per_slot_written();
    let notes: Vec<Note> = decode(tokens, &Vocab::complete(), tps)?
        .to_notes()
        .into_iter()
        .filter(|n| n.onset >= k * tps)
        .map(|n| Note { onset: n.onset - k * tps, ..n })
        .collect();
    tokens_of(&notes, measures)
}

/// Drop the first `k` slots of a clip, `k` drawn below one measure, cutting the
/// skeleton at the nearest frame. Moves every beat to a fresh position in the
/// measure so the decoder has to read the phase from the conditioning.
fn shift_crop(s: &Sample, rng: &mut impl Rng) -> Result<(SkeletonSequence, Vec<TokenQuad>), PipelineError> {
    let per_slot = crate::sequence::frames_per_slot(s.bpm, s.skeleton.fps as f64);
    let k = rng.gen_range(0..SLOTS_PER_MEASURE);
    let cut = (k as f64 * per_slot).round() as usize;
    if k == 0 || cut + 1 >= s.skeleton.len() {
        return Ok((s.skeleton.clone(), s.drums.clone()));
    }
    let seq = s.skeleton.window(cut, s.skeleton.len() - cut);
    let tokens = shift_tokens(&s.drums, k, measures_for_frames(seq.len(), s.bpm))?;
    Ok((seq, tokens))
}

/// Pretrain the masked model on full sequences and record scaffold statistics.
pub fn train_bert(corpus: &Corpus, cfg: &Config) -> Result<(Checkpoint, LossLog), PipelineError> {
    cfg.validate()?;
    let tc = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0xbe27);
    let vocab = corpus_vocab(corpus)?;
    let samples = train_samples(corpus)?;
    let seqs: Vec<Vec<TokenQuad>> = samples.iter().map(|s| s.tokens.clone()).collect();
    let stats = ScaffoldStats::from_corpus(&seqs);
    let mut store = ParamStore::new();
    let model = BertModel::new(&mut store, &mut rng, &cfg.bert, &vocab)?;
    let mut log = LossLog::new(&[]);
    for t in 1..=tc.steps as u64 {
        let mut batch = Vec::with_capacity(tc.batch);
        for _ in 0..tc.batch {
            let s = &samples[rng.gen_range(0..samples.len())];
            // same phase shift as the drum model: every slot offset gets seen
            let k = if tc.augment { rng.gen_range(0..SLOTS_PER_MEASURE) } else { 0 };
            batch.push(if k == 0 { s.tokens.clone() } else { shift_tokens(&s.tokens, k, s.measures)? });
        }
        let loss = train_step_bert(&mut store, &model, &batch, &mut rng, t, &tc.schedule, &tc.adam)?;
        log.rows.push(vec![t as f64, tc.schedule.lr(t), loss]);
    }
    let ckpt = Checkpoint {
        step: tc.steps as u64,
        meta: vec![
            ("kind".into(), "bert".into()),
            ("bert".into(), json(&cfg.bert)),
            ("vocab".into(), json(&vocab)),
            ("scaffold".into(), json(&stats)),
            ("seed".into(), tc.seed.to_string()),
        ],
        params: store,
    };
    Ok((ckpt, log))
}

/// Tempo from detected beats: median beat interval, clamped to 60..200 bpm;
/// 120 bpm when fewer than two beats are found.
pub fn estimate_bpm(beat_frames: &[usize], fps: f64) -> f64 {
    let mut gaps: Vec<usize> = beat_frames.windows(2).map(|w| w[1] - w[0]).filter(|&g| g > 0).collect();
    if gaps.is_empty() {
        return 120.0;
    }
    gaps.sort_unstable();
    let n = gaps.len();
    let median = if n % 2 == 1 {
        gaps[n / 2] as f64
    } else {
        (gaps[n / 2 - 1] + gaps[n / 2]) as f64 / 2.0
    };
    (60.0 * fps / median).clamp(60.0, 200.0)
}

/// Output of drum generation for one clip.
#[derive(Clone, Debug)]
pub struct Generated {
    pub tokens: Vec<TokenQuad>,
    pub notes: Vec<Note>,
    /// Per-frame beat flags from the beat head.
    pub beats: Vec<u8>,
    pub bpm: f64,
    pub genre_logits: Vec<f64>,
}

/// Motion encoder plus drum decoder restored from a drum checkpoint.
#[derive(Clone, Debug)]
pub struct DrumGenerator {
    pub encoder: MotionEncoder,
    pub model: DrumModel,
    pub store: ParamStore,
}

impl DrumGenerator {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PipelineError> {
        expect_kind(ckpt, "drum")?;
        let mcfg: MotionConfig = meta_json(ckpt, "motion")?;
        let dcfg: DrumConfig = meta_json(ckpt, "drum")?;
        let vocab: Vocab = meta_json(ckpt, "vocab")?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let encoder = MotionEncoder::new(&mut store, &mut rng, &mcfg)?;
        let model = DrumModel::new(&mut store, &mut rng, &dcfg, &vocab)?;
        require_all(&store, &ckpt.params)?;
        copy_params(&mut store, &ckpt.params)?;
        Ok(DrumGenerator { encoder, model, store })
    }

    /// Fused conditioning with beats from the beat head, then sampled drums
    /// covering the clip's duration.
    pub fn generate(&self, seq: &SkeletonSequence, sampler: &Sampler, rng: &mut impl Rng) -> Result<Generated, PipelineError> {
        let graph = MotionGraph::for_joints(seq.joints)?;
        let cond = self.encoder.condition(&self.store, seq, &graph, None)?;
        let bpm = estimate_bpm(&beat_peaks(&cond.beats), seq.fps as f64);
        let measures = measures_for_frames(seq.len(), bpm);
        let tokens = generate(&self.store, &self.model, &cond.z, bpm, sampler, measures, rng)?;
        let notes = decode(&tokens, &self.model.vocab, ticks_per_slot_written())?.to_notes();
        Ok(Generated {
            tokens,
            notes,
            beats: cond.beats,
            bpm,
            genre_logits: cond.genre_logits,
        })
    }

    /// Teacher-forced next-token accuracy against a known drum sequence, with
    /// Z built from the given beats.
    pub fn accuracy(&self, seq: &SkeletonSequence, beats: &[u8], tokens: &[TokenQuad], bpm: f64) -> Result<f64, PipelineError> {
        let graph = MotionGraph::for_joints(seq.joints)?;
        let cond = self.encoder.condition(&self.store, seq, &graph, Some(beats))?;
        Ok(self.model.accuracy(&self.store, &cond.z, tokens, bpm)?)
    }

    /// Per-frame beat flags for one clip.
    pub fn beats(&self, seq: &SkeletonSequence) -> Result<Vec<u8>, PipelineError> {
        let graph = MotionGraph::for_joints(seq.joints)?;
        let mut g = Graph::with_params(&self.store);
        let l = self.encoder.beat_logits(&mut g, seq, &graph)?;
        Ok(crate::motion::threshold_beats(g.value(l)))
    }

    pub fn conditioning(&self, seq: &SkeletonSequence, beats: Option<&[u8]>) -> Result<Tensor, PipelineError> {
        let graph = MotionGraph::for_joints(seq.joints)?;
        Ok(self.encoder.condition(&self.store, seq, &graph, beats)?.z)
    }
}

/// Masked model plus scaffold statistics restored from a bert checkpoint.
#[derive(Clone, Debug)]
pub struct Completer {
    pub model: BertModel,
    pub store: ParamStore,
    pub stats: ScaffoldStats,
}

impl Completer {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PipelineError> {
        expect_kind(ckpt, "bert")?;
        let cfg: BertConfig = meta_json(ckpt, "bert")?;
        let vocab: Vocab = meta_json(ckpt, "vocab")?;
        let stats: ScaffoldStats = meta_json(ckpt, "scaffold")?;
        let mut store = ParamStore::new();
        let model = BertModel::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), &cfg, &vocab)?;
        require_all(&store, &ckpt.params)?;
        copy_params(&mut store, &ckpt.params)?;
        Ok(Completer { model, store, stats })
    }

    /// Add the other tracks around `drums`, with a scaffold sampled from the
    /// corpus statistics.
    pub fn complete(&self, drums: &[TokenQuad], sampler: &Sampler, rng: &mut impl Rng) -> Result<Vec<TokenQuad>, PipelineError> {
        let measures = drums.iter().filter(|t| t.event == crate::midi::Event::Bom).count();
        let scaffold = self.stats.sample(measures, rng);
        Ok(complete_tracks(&self.store, &self.model, drums, &scaffold, sampler, rng)?)
    }
}
