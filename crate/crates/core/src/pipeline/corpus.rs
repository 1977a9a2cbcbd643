//! Corpus manifests, sliding windows, splits and the MIDI side of ingestion.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::midi::smf::WRITE_TICKS_PER_QUARTER;
use crate::midi::{encode, parse_smf, quantize, Instrument, MidiClip, Note, TokenQuad, Vocab};
use crate::midi::quantize::{rescale_notes, ticks_per_slot};
use crate::motion::{SkeletonSequence, FPS};

pub const DEFAULT_WINDOW: usize = 600;
pub const DEFAULT_STRIDE: usize = 40;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Window spans over a clip, plus a warning when the clip is too short for any.
#[derive(Clone, Debug, PartialEq)]
pub struct Windows {
    pub spans: Vec<(usize, usize)>,
    pub warning: Option<String>,
}

pub fn sliding_window(frames: usize, window: usize, stride: usize) -> Windows {
    if window == 0 || frames < window {
        return Windows {
            spans: Vec::new(),
            warning: Some(format!("clip of {frames} frames is shorter than the {window}-frame window")),
        };
    }
    let stride = stride.max(1);
    let spans = (0..=(frames - window) / stride)
        .map(|k| (k * stride, k * stride + window))
        .collect();
    Windows { spans, warning: None }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    /// Paths are relative to the manifest's directory.
    pub skeleton: PathBuf,
    pub midi: PathBuf,
    pub genre: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub fps: u32,
    pub window: usize,
    pub stride: usize,
    pub clips: Vec<ClipRecord>,
}

impl CorpusManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        fs::write(path, self.to_json()).map_err(|e| PipelineError::io(path, e))
    }

    /// Read a manifest and check that every referenced file exists.
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let m: CorpusManifest = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Invalid(format!("manifest {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for c in &m.clips {
            for p in [&c.skeleton, &c.midi] {
                if !dir.join(p).exists() {
                    return Err(PipelineError::Invalid(format!("clip {}: missing file {}", c.id, p.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

/// Assign train/val/test 8:1:1 within each genre. Each genre's clips are
/// ordered by id and shuffled by `seed`, so the result does not depend on
/// input order. Records come back in input order.
pub fn split(entries: &[ClipRecord], seed: u64) -> Vec<ClipRecord> {
    let mut by_genre: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        by_genre.entry(e.genre.as_str()).or_default().push(i);
    }
    let mut out = entries.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in by_genre.values_mut() {
        idx.sort_by(|&a, &b| entries[a].id.cmp(&entries[b].id).then(a.cmp(&b)));
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_val = (n as f64 * 0.1).round() as usize;
        let n_test = (n as f64 * 0.1).round() as usize;
        let n_train = n - n_val - n_test;
        for (k, &i) in idx.iter().enumerate() {
            out[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    out
}

/// Notes at the writer's resolution with drums on track 0 and the remaining
/// tracks renumbered 1.. in order of their original index.
pub fn normalize_notes(clip: &MidiClip) -> Vec<Note> {
    let notes = rescale_notes(&clip.notes, clip.ticks_per_quarter, WRITE_TICKS_PER_QUARTER);
    let mut melodic: Vec<u8> = notes.iter().filter(|n| !n.instrument.is_drum()).map(|n| n.track).collect();
    melodic.sort_unstable();
    melodic.dedup();
    notes
        .into_iter()
        .map(|n| Note {
            track: if n.instrument.is_drum() {
                0
            } else {
                1 + melodic.binary_search(&n.track).unwrap() as u8
            },
            ..n
        })
        .collect()
}

pub fn ticks_per_slot_written() -> u64 {
    ticks_per_slot(WRITE_TICKS_PER_QUARTER).expect("writer resolution is on the slot grid")
}

/// Quantize and encode notes, padding to at least `measures` bars.
pub fn tokens_of(notes: &[Note], measures: usize) -> Result<Vec<TokenQuad>, PipelineError> {
    let mut q = quantize(notes, ticks_per_slot_written());
    q.pad_to(measures);
    Ok(encode(&q, &Vocab::complete())?)
}

pub fn drum_notes(notes: &[Note], drum_track: u8) -> Vec<Note> {
    notes
        .iter()
        .filter(|n| n.instrument == Instrument::Drum)
        .map(|n| Note { track: drum_track, ..*n })
        .collect()
}

pub fn frames_per_measure(bpm: f64) -> f64 {
    FPS as f64 * 60.0 / bpm * 4.0
}

pub fn measures_for_frames(frames: usize, bpm: f64) -> usize {
    ((frames as f64 / frames_per_measure(bpm)) - 1e-9).ceil().max(1.0) as usize
}

/// One windowed training pair.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub genre: String,
    pub split: Split,
    pub skeleton: SkeletonSequence,
    /// Every track.
    pub tokens: Vec<TokenQuad>,
    /// Drum notes only, on the drum track.
    pub drums: Vec<TokenQuad>,
    pub bpm: f64,
    pub measures: usize,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
    pub samples: Vec<Sample>,
    pub warnings: Vec<String>,
}

impl Corpus {
    /// Load `dir/manifest.json` and cut every clip into windows.
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let manifest = CorpusManifest::read(&dir.join(MANIFEST_FILE))?;
        let mut samples = Vec::new();
        let mut warnings = Vec::new();
        for rec in &manifest.clips {
            let skel = SkeletonSequence::read(&dir.join(&rec.skeleton))
                .map_err(|e| PipelineError::Invalid(format!("clip {}: {e}", rec.id)))?;
            let bytes = fs::read(dir.join(&rec.midi)).map_err(|e| PipelineError::io(&dir.join(&rec.midi), e))?;
            let midi = parse_smf(&bytes).map_err(|e| PipelineError::Invalid(format!("clip {}: {e}", rec.id)))?;
            let windows = sliding_window(skel.len(), manifest.window, manifest.stride);
            if let Some(w) = windows.warning {
                warnings.push(format!("clip {}: {w}", rec.id));
            }
            let notes = normalize_notes(&midi);
            let bpm = midi.bpm();
            let tpq = WRITE_TICKS_PER_QUARTER as f64;
            for (k, &(start, end)) in windows.spans.iter().enumerate() {
                let to_tick = |frame: usize| (frame as f64 / skel.fps as f64 * bpm / 60.0 * tpq).round() as u64;
                let (t0, t1) = (to_tick(start), to_tick(end));
                let inside: Vec<Note> = notes
                    .iter()
                    .filter(|n| n.onset >= t0 && n.onset < t1)
                    .map(|n| Note { onset: n.onset - t0, ..*n })
                    .collect();
                let measures = measures_for_frames(end - start, bpm);
                let id = if windows.spans.len() == 1 { rec.id.clone() } else { format!("{}#{k}", rec.id) };
                samples.push(Sample {
                    id,
                    genre: rec.genre.clone(),
                    split: rec.split,
                    skeleton: skel.window(start, end - start),
                    tokens: tokens_of(&inside, measures)?,
                    drums: tokens_of(&drum_notes(&inside, 0), measures)?,
                    bpm,
                    measures,
                });
            }
        }
        Ok(Corpus {
            dir: dir.to_path_buf(),
            manifest,
            samples,
            warnings,
        })
    }

    pub fn of_split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Held-out samples: validation and test.
    pub fn held_out(&self) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split != Split::Train).collect()
    }
}

/// Slot index of every onset, for quick beat checks.
pub fn onset_slots(tokens: &[TokenQuad]) -> Vec<u64> {
    let times = crate::sequence::slot_times(tokens);
    tokens
        .iter()
        .zip(times)
        .filter(|(t, _)| t.event.is_pitch())
        .map(|(_, s)| s)
        .collect()
}
