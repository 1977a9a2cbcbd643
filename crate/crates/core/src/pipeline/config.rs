//! Run configuration as a `key = value` text file.
//!
//! Blank lines and `#` comments are ignored. `preset = desk|paper` resets every
//! key to that preset and is normally the first line; later lines override
//! single keys. Lists are comma separated.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::bert::BertConfig;
use crate::drum::DrumConfig;
use crate::metrics::DEFAULT_TOLERANCE;
use crate::motion::MotionConfig;
use crate::sequence::Sampler;
use crate::tensor::{AdamConfig, Schedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    /// Random affine jitter of skeletons while training the beat head.
    pub augment: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub preset: String,
    pub motion: MotionConfig,
    pub drum: DrumConfig,
    pub bert: BertConfig,
    pub train: TrainConfig,
    pub sampler: Sampler,
    pub tolerance: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config::desk()
    }
}

impl Config {
    /// Published sizes and schedule.
    pub fn paper() -> Self {
        Config {
            preset: "paper".into(),
            motion: MotionConfig::default(),
            drum: DrumConfig::default(),
            bert: BertConfig::default(),
            train: TrainConfig {
                steps: 100_000,
                batch: 16,
                schedule: Schedule::default(),
                adam: AdamConfig::default(),
                augment: true,
                seed: 0,
            },
            sampler: Sampler::default(),
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    /// Small widths and a short warmup for one CPU core.
    pub fn desk() -> Self {
        Config {
            preset: "desk".into(),
            motion: MotionConfig::desk(),
            drum: DrumConfig::desk(),
            bert: BertConfig::desk(),
            train: TrainConfig {
                steps: 500,
                batch: 4,
                schedule: Schedule { peak: 3e-3, warmup: 50 },
                adam: AdamConfig::default(),
                augment: true,
                seed: 0,
            },
            sampler: Sampler::default(),
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    pub fn preset(name: &str) -> Result<Self, PipelineError> {
        match name {
            "desk" => Ok(Config::desk()),
            "paper" => Ok(Config::paper()),
            _ => Err(PipelineError::Config(format!("unknown preset `{name}`"))),
        }
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Config::desk();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| PipelineError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    /// Apply a `key=value` override.
    pub fn apply(&mut self, pair: &str) -> Result<(), PipelineError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| PipelineError::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let m = &mut self.motion;
        let d = &mut self.drum;
        let b = &mut self.bert;
        let t = &mut self.train;
        match key {
            "preset" => *self = Config::preset(value)?,
            "motion.stgcn_channels" => m.stgcn_channels = list(key, value)?,
            "motion.feature_dim" => m.feature_dim = num(key, value)?,
            "motion.kernel" => m.kernel = num(key, value)?,
            "motion.beat_layers" => m.beat_layers = num(key, value)?,
            "motion.beat_heads" => m.beat_heads = num(key, value)?,
            "motion.beat_ff" => m.beat_ff = num(key, value)?,
            "motion.style_channels" => m.style_channels = list(key, value)?,
            "motion.style_hidden" => m.style_hidden = num(key, value)?,
            "motion.style_dim" => m.style_dim = num(key, value)?,
            "motion.genres" => m.genres = num(key, value)?,
            "d_model" => {
                m.d_model = num(key, value)?;
                d.d_model = m.d_model;
            }
            "drum.heads" => d.heads = num(key, value)?,
            "drum.enc_layers" => d.enc_layers = num(key, value)?,
            "drum.dec_layers" => d.dec_layers = num(key, value)?,
            "drum.ff" => d.ff = num(key, value)?,
            "drum.max_len" => d.max_len = num(key, value)?,
            "drum.max_distance" => d.max_distance = num(key, value)?,
            "bert.hidden" => b.hidden = num(key, value)?,
            "bert.layers" => b.layers = num(key, value)?,
            "bert.heads" => b.heads = num(key, value)?,
            "bert.ff" => b.ff = num(key, value)?,
            "bert.max_len" => b.max_len = num(key, value)?,
            "bert.max_distance" => b.max_distance = num(key, value)?,
            "bert.mask_rate" => b.mask_rate = num(key, value)?,
            "train.steps" => t.steps = num(key, value)?,
            "train.batch" => t.batch = num(key, value)?,
            "train.lr_peak" => t.schedule.peak = num(key, value)?,
            "train.warmup" => t.schedule.warmup = num(key, value)?,
            "train.beta1" => t.adam.beta1 = num(key, value)?,
            "train.beta2" => t.adam.beta2 = num(key, value)?,
            "train.eps" => t.adam.eps = num(key, value)?,
            "train.augment" => t.augment = num(key, value)?,
            "train.seed" => t.seed = num(key, value)?,
            "sampler.temperature" => self.sampler.temperature = num(key, value)?,
            "sampler.top_k" => self.sampler.top_k = num(key, value)?,
            "eval.tolerance" => self.tolerance = num(key, value)?,
            _ => return Err(PipelineError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.motion.d_model != self.drum.d_model {
            return bad("motion and drum model widths differ".into());
        }
        if self.drum.d_model % self.drum.heads != 0 || self.bert.hidden % self.bert.heads != 0 {
            return bad("model width must be a multiple of the head count".into());
        }
        if self.motion.feature_dim % self.motion.beat_heads != 0 {
            return bad("motion.feature_dim must be a multiple of motion.beat_heads".into());
        }
        if self.motion.kernel % 2 == 0 {
            return bad("motion.kernel must be odd".into());
        }
        if self.train.batch == 0 {
            return bad("train.batch must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bert.mask_rate) {
            return bad("bert.mask_rate must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Full listing in the same format `parse` reads.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let (m, d, b, t) = (&self.motion, &self.drum, &self.bert, &self.train);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("preset", self.preset.clone());
        kv("motion.stgcn_channels", join(&m.stgcn_channels));
        kv("motion.feature_dim", m.feature_dim.to_string());
        kv("motion.kernel", m.kernel.to_string());
        kv("motion.beat_layers", m.beat_layers.to_string());
        kv("motion.beat_heads", m.beat_heads.to_string());
        kv("motion.beat_ff", m.beat_ff.to_string());
        kv("motion.style_channels", join(&m.style_channels));
        kv("motion.style_hidden", m.style_hidden.to_string());
        kv("motion.style_dim", m.style_dim.to_string());
        kv("motion.genres", m.genres.to_string());
        kv("d_model", d.d_model.to_string());
        kv("drum.heads", d.heads.to_string());
        kv("drum.enc_layers", d.enc_layers.to_string());
        kv("drum.dec_layers", d.dec_layers.to_string());
        kv("drum.ff", d.ff.to_string());
        kv("drum.max_len", d.max_len.to_string());
        kv("drum.max_distance", d.max_distance.to_string());
        kv("bert.hidden", b.hidden.to_string());
        kv("bert.layers", b.layers.to_string());
        kv("bert.heads", b.heads.to_string());
        kv("bert.ff", b.ff.to_string());
        kv("bert.max_len", b.max_len.to_string());
        kv("bert.max_distance", b.max_distance.to_string());
        kv("bert.mask_rate", b.mask_rate.to_string());
        kv("train.steps", t.steps.to_string());
        kv("train.batch", t.batch.to_string());
        kv("train.lr_peak", t.schedule.peak.to_string());
        kv("train.warmup", t.schedule.warmup.to_string());
        kv("train.beta1", t.adam.beta1.to_string());
        kv("train.beta2", t.adam.beta2.to_string());
        kv("train.eps", t.adam.eps.to_string());
        kv("train.augment", t.augment.to_string());
        kv("train.seed", t.seed.to_string());
        kv("sampler.temperature", self.sampler.temperature.to_string());
        kv("sampler.top_k", self.sampler.top_k.to_string());
        kv("eval.tolerance", self.tolerance.to_string());
        s
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError> {
    value
        .parse()
        .map_err(|_| PipelineError::Config(format!("bad value `{value}` for `{key}`")))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>, PipelineError> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}
