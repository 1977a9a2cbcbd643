//! Synthetic paired corpus: skeletons that reverse direction on every beat,
//! drums on those beats and a second track echoing the drums.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{split, ClipRecord, CorpusManifest, Split, DEFAULT_STRIDE, MANIFEST_FILE};
use super::PipelineError;
use crate::midi::smf::WRITE_TICKS_PER_QUARTER;
use crate::midi::{write_smf, Instrument, Note, SLOTS_PER_MEASURE};
use crate::motion::{SkeletonSequence, FPS};

const SLOTS_PER_BEAT: u64 = SLOTS_PER_MEASURE / 4;
const KICK: u8 = 36;
const SNARE: u8 = 38;

/// Motion texture of a genre.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    /// Cosine swings, zero velocity at each reversal.
    Smooth,
    /// Linear swings with sharp corners and per-frame jitter.
    Jerky,
}

impl Archetype {
    pub fn genre(self) -> &'static str {
        match self {
            Archetype::Smooth => "ballet",
            Archetype::Jerky => "hip-hop",
        }
    }

    /// Swing value in [-1, 1] at phase `phi` ∈ [0, 1) of a beat interval.
    fn swing(self, phi: f64) -> f64 {
        match self {
            Archetype::Smooth => (PI * phi).cos(),
            Archetype::Jerky => 1.0 - 2.0 * phi,
        }
    }
}

/// How the second track follows the drums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EchoRule {
    pub delay_slots: u64,
    pub program: u8,
    pub duration_slots: u64,
    /// Drum pitch → echo pitch.
    pub pitch_map: Vec<(u8, u8)>,
}

impl Default for EchoRule {
    fn default() -> Self {
        EchoRule {
            delay_slots: 1,
            program: 32,
            duration_slots: 4,
            pitch_map: vec![(KICK, 40), (SNARE, 43)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clips: usize,
    pub genres: Vec<Archetype>,
    /// Frames between beats; 10 at 20 fps is 120 bpm.
    pub beat_period: usize,
    pub beats_per_clip: usize,
    pub echo: EchoRule,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            clips: 40,
            genres: vec![Archetype::Smooth, Archetype::Jerky],
            beat_period: 10,
            beats_per_clip: 16,
            echo: EchoRule::default(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn bpm(&self) -> f64 {
        60.0 * FPS as f64 / self.beat_period as f64
    }

    pub fn frames(&self) -> usize {
        self.beat_period * self.beats_per_clip
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.beat_period < 2 {
            return Err(PipelineError::Invalid("beat period must be at least 2 frames".into()));
        }
        if self.genres.is_empty() || self.clips == 0 || self.beats_per_clip == 0 {
            return Err(PipelineError::Invalid("synthetic corpus needs clips, beats and genres".into()));
        }
        Ok(())
    }
}

/// One generated pair before it is written out.
#[derive(Clone, Debug)]
pub struct SyntheticClip {
    pub id: String,
    pub archetype: Archetype,
    pub skeleton: SkeletonSequence,
    pub notes: Vec<Note>,
    /// Beat onsets in slots from the clip start.
    pub beat_slots: Vec<u64>,
}

// Seven joints: pelvis, spine, head, left hand, right hand, left foot, right foot.
const REST: [[f64; 3]; 7] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.5, 0.0],
    [0.0, 0.8, 0.0],
    [-0.4, 0.5, 0.0],
    [0.4, 0.5, 0.0],
    [-0.15, -0.8, 0.0],
    [0.15, -0.8, 0.0],
];

/// Swing signal with extrema exactly at `beats` (alternating sign).
fn swing_at(t: usize, beats: &[usize], period: usize, arche: Archetype) -> f64 {
    let t = t as f64;
    let k = beats.partition_point(|&b| (b as f64) <= t) as i64 - 1;
    let at = |i: i64| -> f64 {
        if i < 0 {
            beats[0] as f64 + i as f64 * period as f64
        } else if (i as usize) < beats.len() {
            beats[i as usize] as f64
        } else {
            *beats.last().unwrap() as f64 + (i as usize - beats.len() + 1) as f64 * period as f64
        }
    };
    let (a, b) = (at(k), at(k + 1));
    let phi = ((t - a) / (b - a)).clamp(0.0, 1.0);
    let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    sign * arche.swing(phi)
}

pub fn synth_clip(spec: &SyntheticSpec, index: usize, rng: &mut impl Rng) -> Result<SyntheticClip, PipelineError> {
    let arche = spec.genres[index % spec.genres.len()];
    let period = spec.beat_period;
    let frames = spec.frames();
    let phase = rng.gen_range(0..SLOTS_PER_BEAT);
    let beat_slots: Vec<u64> = (0..spec.beats_per_clip as u64).map(|k| phase + k * SLOTS_PER_BEAT).collect();
    let beat_frames: Vec<usize> = beat_slots
        .iter()
        .map(|&s| ((s as f64 * period as f64 / SLOTS_PER_BEAT as f64).round() as usize).min(frames - 1))
        .collect();

    let amp = rng.gen_range(0.2..0.35);
    let offset = [rng.gen_range(-1.0..1.0), rng.gen_range(-0.2..0.2), rng.gen_range(-1.0..1.0)];
    let drift = [rng.gen_range(-0.002..0.002), 0.0, rng.gen_range(-0.002..0.002)];
    let jitter = match arche {
        Archetype::Smooth => 0.0,
        Archetype::Jerky => 0.03,
    };
    let mut data = Vec::with_capacity(frames);
    for t in 0..frames {
        let u = swing_at(t, &beat_frames, period, arche);
        let mut pose = REST;
        pose[0][1] += 0.05 * u;
        pose[1][1] += 0.05 * u;
        pose[2][1] += 0.05 * u;
        pose[3][0] -= 0.3 * amp * u;
        pose[3][1] += amp * u;
        pose[4][0] += 0.3 * amp * u;
        pose[4][1] += amp * u;
        for (j, p) in pose.iter_mut().enumerate() {
            for c in 0..3 {
                p[c] += offset[c] + drift[c] * t as f64;
                if j > 0 && jitter > 0.0 {
                    p[c] += rng.gen_range(-jitter..jitter);
                }
            }
        }
        data.push(pose.to_vec());
    }
    let mut skeleton = SkeletonSequence::new(data).map_err(|e| PipelineError::Invalid(e.to_string()))?;
    skeleton.genre = Some(arche.genre().to_string());
    skeleton.beat_frames = beat_frames;

    let tps = WRITE_TICKS_PER_QUARTER as u64 / SLOTS_PER_BEAT;
    let mut notes = Vec::new();
    for (k, &s) in beat_slots.iter().enumerate() {
        let pitch = if k % 2 == 0 { KICK } else { SNARE };
        notes.push(Note {
            pitch,
            onset: s * tps,
            duration: 2 * tps,
            track: 0,
            instrument: Instrument::Drum,
            velocity: 100,
        });
        if let Some(&(_, echo)) = spec.echo.pitch_map.iter().find(|(d, _)| *d == pitch) {
            notes.push(Note {
                pitch: echo,
                onset: (s + spec.echo.delay_slots) * tps,
                duration: spec.echo.duration_slots * tps,
                track: 1,
                instrument: Instrument::Program(spec.echo.program),
                velocity: 100,
            });
        }
    }
    Ok(SyntheticClip {
        id: format!("synth_{index:04}"),
        archetype: arche,
        skeleton,
        notes,
        beat_slots,
    })
}

/// Generate every clip in memory, deterministically from `spec.seed`.
pub fn synth_clips(spec: &SyntheticSpec) -> Result<Vec<SyntheticClip>, PipelineError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.clips).map(|i| synth_clip(spec, i, &mut rng)).collect()
}

/// Write `clips/<id>.json`, `midi/<id>.mid` and a split manifest under `dir`.
pub fn make_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<CorpusManifest, PipelineError> {
    let clips = synth_clips(spec)?;
    for sub in ["clips", "midi"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| PipelineError::io(&dir.join(sub), e))?;
    }
    let mut records = Vec::new();
    for c in &clips {
        let skel_rel = PathBuf::from("clips").join(format!("{}.json", c.id));
        let midi_rel = PathBuf::from("midi").join(format!("{}.mid", c.id));
        c.skeleton
            .write(&dir.join(&skel_rel))
            .map_err(|e| PipelineError::Invalid(e.to_string()))?;
        let smf = write_smf(&c.notes, spec.bpm());
        fs::write(dir.join(&midi_rel), smf.bytes).map_err(|e| PipelineError::io(&dir.join(&midi_rel), e))?;
        records.push(ClipRecord {
            id: c.id.clone(),
            skeleton: skel_rel,
            midi: midi_rel,
            genre: c.archetype.genre().to_string(),
            split: Split::Train,
        });
    }
    let manifest = CorpusManifest {
        seed: spec.seed,
        fps: FPS,
        window: spec.frames(),
        stride: DEFAULT_STRIDE,
        clips: split(&records, spec.seed),
    };
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
