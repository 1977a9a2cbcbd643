use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MotionError, MotionGraph, SkeletonSequence};
use crate::nn::{sinusoidal, EncoderBlock, GruCell, LayerNorm, Linear, StGcnBlock};
use crate::tensor::{Graph, ParamStore, Tensor, TensorError, Var};

type R = Result<Var, TensorError>;

pub const GENRES: [&str; 6] = ["classical", "hip-hop", "ballet", "modern", "latin", "house"];

pub fn genre_index(name: &str) -> Option<usize> {
    GENRES.iter().position(|g| *g == name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub stgcn_channels: Vec<usize>,
    pub feature_dim: usize,
    pub kernel: usize,
    pub beat_layers: usize,
    pub beat_heads: usize,
    pub beat_ff: usize,
    pub style_channels: Vec<usize>,
    pub style_hidden: usize,
    pub style_dim: usize,
    pub genres: usize,
    pub d_model: usize,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            stgcn_channels: vec![64, 64, 64, 128, 128, 128, 256, 256, 256],
            feature_dim: 512,
            kernel: 9,
            beat_layers: 2,
            beat_heads: 8,
            beat_ff: 1024,
            style_channels: vec![64, 64, 128, 128],
            style_hidden: 128,
            style_dim: 32,
            genres: GENRES.len(),
            d_model: 512,
        }
    }
}

impl MotionConfig {
    /// Same topology at widths that train on one CPU core in minutes.
    pub fn desk() -> Self {
        MotionConfig {
            stgcn_channels: vec![8, 8, 8, 12, 12, 12, 16, 16, 16],
            feature_dim: 16,
            kernel: 9,
            beat_layers: 1,
            beat_heads: 2,
            beat_ff: 32,
            style_channels: vec![8, 8, 12, 12],
            style_hidden: 16,
            style_dim: 32,
            genres: GENRES.len(),
            d_model: 32,
        }
    }
}

/// Spatio-temporal graph convolutions, joint pooling, then a projection to F channels.
#[derive(Clone, Debug)]
pub struct StGcn {
    pub blocks: Vec<StGcnBlock>,
    pub proj: Linear,
}

impl StGcn {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        channels: &[usize],
        kernel: usize,
        out_dim: usize,
    ) -> Result<Self, TensorError> {
        let mut blocks = Vec::with_capacity(channels.len());
        let mut c = c_in;
        for (i, &co) in channels.iter().enumerate() {
            blocks.push(StGcnBlock::new(store, rng, &format!("{name}.b{i}"), c, co, kernel)?);
            c = co;
        }
        let proj = Linear::new(store, rng, &format!("{name}.proj"), c, out_dim)?;
        Ok(StGcn { blocks, proj })
    }

    /// Per-joint features (T·J rows) after the graph blocks.
    pub fn joint_features(&self, g: &mut Graph<'_>, x: Var, graph: &MotionGraph) -> R {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, h, graph.normalized())?;
        }
        Ok(h)
    }

    /// T×F movement features.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, graph: &MotionGraph) -> R {
        let h = self.joint_features(g, x, graph)?;
        let p = g.group_mean(h, graph.joints)?;
        self.proj.forward(g, p)
    }
}

/// Per-joint input width: root-centered position then velocity.
pub const INPUT_CHANNELS: usize = 6;

/// Root-centered coordinates and their per-second velocity (zero on the
/// first frame) as a `(T·J)×6` graph constant.
pub fn skeleton_input(g: &mut Graph<'_>, seq: &SkeletonSequence, graph: &MotionGraph) -> Result<Var, MotionError> {
    if seq.joints != graph.joints {
        return Err(MotionError::Invalid(format!(
            "clip has {} joints but the graph has {}",
            seq.joints, graph.joints
        )));
    }
    let c = seq.root_centered(graph.root);
    let fps = seq.fps as f64;
    let mut data = Vec::with_capacity(c.len() * c.joints * INPUT_CHANNELS);
    for (t, frame) in c.frames.iter().enumerate() {
        for (j, p) in frame.iter().enumerate() {
            data.extend_from_slice(p);
            let prev = if t == 0 { p } else { &c.frames[t - 1][j] };
            data.extend((0..3).map(|k| (p[k] - prev[k]) * fps));
        }
    }
    Ok(g.constant(Tensor::new(&[c.len() * c.joints, INPUT_CHANNELS], data)?))
}

pub fn stgcn_forward(g: &mut Graph<'_>, net: &StGcn, seq: &SkeletonSequence, graph: &MotionGraph) -> Result<Var, MotionError> {
    let x = skeleton_input(g, seq, graph)?;
    Ok(net.forward(g, x, graph)?)
}

/// Self-attention over frames followed by a per-frame two-class head.
#[derive(Clone, Debug)]
pub struct BeatHead {
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
    pub out: Linear,
}

impl BeatHead {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &MotionConfig) -> Result<Self, TensorError> {
        let f = cfg.feature_dim;
        let blocks = (0..cfg.beat_layers)
            .map(|i| EncoderBlock::new(store, rng, &format!("{name}.block{i}"), f, cfg.beat_heads, cfg.beat_ff))
            .collect::<Result<_, _>>()?;
        Ok(BeatHead {
            blocks,
            norm: LayerNorm::new(store, &format!("{name}.norm"), f)?,
            out: Linear::new(store, rng, &format!("{name}.out"), f, 2)?,
        })
    }

    /// T×2 logits, column 1 is "beat".
    pub fn logits(&self, g: &mut Graph<'_>, zm: Var) -> R {
        let (t, f) = g.value(zm).dims2();
        let frames: Vec<f64> = (0..t).map(|i| i as f64).collect();
        let pe = g.constant(sinusoidal(&frames, f));
        let mut h = g.add(zm, pe)?;
        for b in &self.blocks {
            h = b.forward(g, h, None, None)?;
        }
        let h = self.norm.forward(g, h)?;
        self.out.forward(g, h)
    }

    /// Class-weighted cross-entropy; each present class carries half the total weight.
    pub fn loss(&self, g: &mut Graph<'_>, logits: Var, target: &[u8]) -> R {
        let n = target.len();
        let beats = target.iter().filter(|&&b| b == 1).count();
        let weights: Vec<f64> = if beats == 0 || beats == n {
            vec![1.0 / n as f64; n]
        } else {
            target
                .iter()
                .map(|&b| if b == 1 { 0.5 / beats as f64 } else { 0.5 / (n - beats) as f64 })
                .collect()
        };
        let targets: Vec<usize> = target.iter().map(|&b| b as usize).collect();
        g.cross_entropy(logits, &targets, &weights)
    }
}

/// Beat iff logit(beat) > logit(non-beat).
pub fn threshold_beats(logits: &Tensor) -> Vec<u8> {
    (0..logits.rows()).map(|i| u8::from(logits.at(i, 1) > logits.at(i, 0))).collect()
}

/// Graph blocks, two recurrent layers, a 32-dim embedding and a genre classifier.
#[derive(Clone, Debug)]
pub struct StyleNet {
    pub blocks: Vec<StGcnBlock>,
    pub gru1: GruCell,
    pub gru2: GruCell,
    pub embed: Linear,
    pub mlp1: Linear,
    pub mlp2: Linear,
}

impl StyleNet {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &MotionConfig) -> Result<Self, TensorError> {
        let mut blocks = Vec::new();
        let mut c = INPUT_CHANNELS;
        for (i, &co) in cfg.style_channels.iter().enumerate() {
            blocks.push(StGcnBlock::new(store, rng, &format!("{name}.b{i}"), c, co, cfg.kernel)?);
            c = co;
        }
        let h = cfg.style_hidden;
        Ok(StyleNet {
            blocks,
            gru1: GruCell::new(store, rng, &format!("{name}.gru1"), c, h)?,
            gru2: GruCell::new(store, rng, &format!("{name}.gru2"), h, h)?,
            embed: Linear::new(store, rng, &format!("{name}.embed"), h, cfg.style_dim)?,
            mlp1: Linear::new(store, rng, &format!("{name}.mlp1"), cfg.style_dim, cfg.style_dim)?,
            mlp2: Linear::new(store, rng, &format!("{name}.mlp2"), cfg.style_dim, cfg.genres)?,
        })
    }

    /// (1×32 embedding, 1×genres logits) for the skeleton input `x`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, graph: &MotionGraph) -> Result<(Var, Var), TensorError> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, h, graph.normalized())?;
        }
        let h = g.group_mean(h, graph.joints)?;
        let h = self.gru1.run(g, h)?;
        let h = self.gru2.run(g, h)?;
        let t = g.value(h).rows();
        let last = g.slice_rows(h, t - 1, 1)?;
        let zs = self.embed.forward(g, last)?;
        let c = self.mlp1.forward(g, zs)?;
        let c = g.relu(c)?;
        let logits = self.mlp2.forward(g, c)?;
        Ok((zs, logits))
    }
}

/// Linear map of [beat bit, style embedding] per frame to d_model.
#[derive(Clone, Debug)]
pub struct Fuse {
    pub lin: Linear,
}

impl Fuse {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &MotionConfig) -> Result<Self, TensorError> {
        Ok(Fuse {
            lin: Linear::new(store, rng, &format!("{name}.lin"), 1 + cfg.style_dim, cfg.d_model)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, zb: &[u8], zs: &[f64]) -> R {
        let width = 1 + zs.len();
        let mut data = Vec::with_capacity(zb.len() * width);
        for &b in zb {
            data.push(b as f64);
            data.extend_from_slice(zs);
        }
        let x = g.constant(Tensor::new(&[zb.len(), width], data)?);
        self.lin.forward(g, x)
    }
}

/// Everything the encoder derives from one clip.
#[derive(Clone, Debug)]
pub struct Conditioning {
    pub beats: Vec<u8>,
    pub style: Vec<f64>,
    pub genre_logits: Vec<f64>,
    pub z: Tensor,
}

#[derive(Clone, Debug)]
pub struct MotionEncoder {
    pub cfg: MotionConfig,
    pub stgcn: StGcn,
    pub beat: BeatHead,
    pub style: StyleNet,
    pub fuse: Fuse,
}

impl MotionEncoder {
    /// Registers parameters under `stgcn.`, `beat.`, `style.` and `fuse.`.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &MotionConfig) -> Result<Self, TensorError> {
        Ok(MotionEncoder {
            stgcn: StGcn::new(store, rng, "stgcn", INPUT_CHANNELS, &cfg.stgcn_channels, cfg.kernel, cfg.feature_dim)?,
            beat: BeatHead::new(store, rng, "beat", cfg)?,
            style: StyleNet::new(store, rng, "style", cfg)?,
            fuse: Fuse::new(store, rng, "fuse", cfg)?,
            cfg: cfg.clone(),
        })
    }

    pub fn beat_logits(&self, g: &mut Graph<'_>, seq: &SkeletonSequence, graph: &MotionGraph) -> Result<Var, MotionError> {
        let zm = stgcn_forward(g, &self.stgcn, seq, graph)?;
        Ok(self.beat.logits(g, zm)?)
    }

    pub fn style_forward(
        &self,
        g: &mut Graph<'_>,
        seq: &SkeletonSequence,
        graph: &MotionGraph,
    ) -> Result<(Var, Var), MotionError> {
        let x = skeleton_input(g, seq, graph)?;
        Ok(self.style.forward(g, x, graph)?)
    }

    /// Beats, style and the fused sequence Z for one clip. `beats` overrides detection.
    pub fn condition(
        &self,
        store: &ParamStore,
        seq: &SkeletonSequence,
        graph: &MotionGraph,
        beats: Option<&[u8]>,
    ) -> Result<Conditioning, MotionError> {
        let mut g = Graph::with_params(store);
        let beats = match beats {
            Some(b) => b.to_vec(),
            None => {
                let l = self.beat_logits(&mut g, seq, graph)?;
                threshold_beats(g.value(l))
            }
        };
        let (zs, logits) = self.style_forward(&mut g, seq, graph)?;
        let style = g.value(zs).data().to_vec();
        let genre_logits = g.value(logits).data().to_vec();
        let z = self.fuse.forward(&mut g, &beats, &style)?;
        Ok(Conditioning {
            z: g.value(z).clone(),
            beats,
            style,
            genre_logits,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny() -> MotionConfig {
        MotionConfig {
            stgcn_channels: vec![3, 4],
            feature_dim: 4,
            kernel: 3,
            beat_layers: 1,
            beat_heads: 2,
            beat_ff: 6,
            style_channels: vec![3],
            style_hidden: 3,
            style_dim: 32,
            genres: 6,
            d_model: 8,
        }
    }

    fn random_clip(rng: &mut ChaCha8Rng, t: usize, j: usize) -> SkeletonSequence {
        let frames = (0..t)
            .map(|_| (0..j).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect())
            .collect();
        SkeletonSequence::new(frames).unwrap()
    }

    #[test]
    fn shapes_preserve_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let enc = MotionEncoder::new(&mut store, &mut rng, &tiny()).unwrap();
        let graph = MotionGraph::for_joints(5).unwrap();
        for t in [1, 4, 13] {
            let clip = random_clip(&mut rng, t, 5);
            let c = enc.condition(&store, &clip, &graph, None).unwrap();
            assert_eq!(c.beats.len(), t);
            assert_eq!(c.style.len(), 32);
            assert_eq!(c.genre_logits.len(), 6);
            assert_eq!(c.z.shape(), &[t, 8]);
        }
    }

    #[test]
    fn fuse_locality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let fuse = Fuse::new(&mut store, &mut rng, "fuse", &tiny()).unwrap();
        for v in store.value_mut(1).data_mut() {
            *v = 0.1;
        }
        let zs: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        let mut g = Graph::with_params(&store);
        let a = fuse.forward(&mut g, &[0, 0, 0, 0], &zs).unwrap();
        let b = fuse.forward(&mut g, &[0, 0, 1, 0], &zs).unwrap();
        let (a, b) = (g.value(a).clone(), g.value(b).clone());
        for t in 0..4 {
            assert_eq!(a.row(t), a.row(0));
            assert!(a.row(t).iter().map(|v| v * v).sum::<f64>() > 0.0);
            if t == 2 {
                assert_ne!(a.row(t), b.row(t));
            } else {
                assert_eq!(a.row(t), b.row(t));
            }
        }
    }

    #[test]
    fn zero_input_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = MotionEncoder::new(&mut store, &mut rng, &tiny()).unwrap();
        let graph = MotionGraph::for_joints(4).unwrap();
        let zero = SkeletonSequence::new(vec![vec![[0.0; 3]; 4]; 6]).unwrap();
        let run = || {
            let mut g = Graph::with_params(&store);
            let v = stgcn_forward(&mut g, &enc.stgcn, &zero, &graph).unwrap();
            g.value(v).clone()
        };
        assert_eq!(run(), run());
    }
}
