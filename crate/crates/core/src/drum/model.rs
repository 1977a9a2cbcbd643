use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DrumError;
use crate::midi::{Field, TokenIds, TokenQuad, Vocab, BOS_IDS, EOS_IDS, NONE};
use crate::motion::FPS;
use crate::nn::{sinusoidal, EncoderBlock, FeedForward, LayerNorm, MultiHeadAttention, RelativeBias};
use crate::sequence::{field_weights, frames_per_slot, slot_times, weighted_loss, FieldHeads, TokenEmbedding};
use crate::tensor::{Graph, ParamStore, Tensor, TensorError, Var};

type R = Result<Var, TensorError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrumConfig {
    pub d_model: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ff: usize,
    pub max_len: usize,
    pub max_distance: i64,
    /// Track number given to every generated drum note.
    pub drum_track: u8,
}

impl Default for DrumConfig {
    fn default() -> Self {
        DrumConfig {
            d_model: 512,
            heads: 8,
            enc_layers: 6,
            dec_layers: 6,
            ff: 1024,
            max_len: 2048,
            max_distance: 128,
            drum_track: 0,
        }
    }
}

impl DrumConfig {
    pub fn desk() -> Self {
        DrumConfig {
            d_model: 32,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ff: 64,
            ..Default::default()
        }
    }
}

/// Causal self-attention, then cross-attention over the conditioning, then a feed-forward sublayer.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub ln1: LayerNorm,
    pub msa: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub vgm: MultiHeadAttention,
    pub ln3: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderBlock {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &DrumConfig) -> Result<Self, TensorError> {
        let d = cfg.d_model;
        Ok(DecoderBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            msa: MultiHeadAttention::new(store, rng, &format!("{name}.msa"), d, cfg.heads)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            vgm: MultiHeadAttention::new(store, rng, &format!("{name}.vgm"), d, cfg.heads)?,
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), d)?,
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), d, cfg.ff)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, memory: Var, mask: &[bool], bias: &[Var]) -> R {
        let n = self.ln1.forward(g, x)?;
        let a = self.msa.forward(g, n, n, Some(mask), Some(bias))?;
        let x = g.add(x, a)?;
        let n = self.ln2.forward(g, x)?;
        let c = vgm(g, &self.vgm, n, memory)?;
        let x = g.add(x, c)?;
        let n = self.ln3.forward(g, x)?;
        let f = self.ffn.forward(g, n)?;
        g.add(x, f)
    }
}

/// Cross-attention from drum states `d` onto every conditioning frame of `z`; no mask on the frame axis.
pub fn vgm(g: &mut Graph<'_>, attn: &MultiHeadAttention, d: Var, z: Var) -> R {
    attn.forward(g, d, z, None, None)
}

/// Decoder inputs derived from a token prefix.
#[derive(Clone, Debug)]
pub struct DecoderInput {
    pub ids: Vec<TokenIds>,
    pub groups: Vec<i64>,
    /// Frame time of each token.
    pub times: Vec<f64>,
    pub is_pitch: Vec<bool>,
}

impl DecoderInput {
    /// BOS followed by `tokens`.
    pub fn new(tokens: &[TokenQuad], vocab: &Vocab, bpm: f64) -> Result<Self, DrumError> {
        let fps = frames_per_slot(bpm, FPS as f64);
        let mut ids = vec![BOS_IDS];
        let mut groups = vec![0];
        let mut times = vec![0.0];
        let mut is_pitch = vec![false];
        for (t, slot) in tokens.iter().zip(slot_times(tokens)) {
            ids.push(vocab.token_ids(t)?);
            groups.push(t.pos_group as i64);
            times.push(slot as f64 * fps);
            is_pitch.push(t.event.is_pitch());
        }
        Ok(DecoderInput {
            ids,
            groups,
            times,
            is_pitch,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Query i sees key j ≤ i, except Pitch siblings sharing i's position group.
    pub fn mask(&self) -> Vec<bool> {
        let n = self.len();
        let mut m = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                let sibling = i != j && self.is_pitch[i] && self.is_pitch[j] && self.groups[i] == self.groups[j];
                m[i * n + j] = !sibling;
            }
        }
        m
    }
}

/// Next-token targets: the tokens themselves, then EOS.
pub fn shifted_targets(tokens: &[TokenQuad], vocab: &Vocab) -> Result<Vec<[Option<u32>; 4]>, DrumError> {
    let mut out = Vec::with_capacity(tokens.len() + 1);
    for t in tokens {
        out.push(vocab.token_ids(t)?.map(Some));
    }
    out.push(EOS_IDS.map(Some));
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct DrumModel {
    pub cfg: DrumConfig,
    pub vocab: Vocab,
    pub embed: TokenEmbedding,
    pub encoder: Vec<EncoderBlock>,
    pub enc_norm: LayerNorm,
    pub rel: RelativeBias,
    pub decoder: Vec<DecoderBlock>,
    pub dec_norm: LayerNorm,
    pub heads: FieldHeads,
}

impl DrumModel {
    /// Registers parameters under `drum.`.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &DrumConfig, vocab: &Vocab) -> Result<Self, TensorError> {
        let d = cfg.d_model;
        let sizes = vocab.sizes();
        let encoder = (0..cfg.enc_layers)
            .map(|i| EncoderBlock::new(store, rng, &format!("drum.enc{i}"), d, cfg.heads, cfg.ff))
            .collect::<Result<_, _>>()?;
        let decoder = (0..cfg.dec_layers)
            .map(|i| DecoderBlock::new(store, rng, &format!("drum.dec{i}"), cfg))
            .collect::<Result<_, _>>()?;
        Ok(DrumModel {
            embed: TokenEmbedding::new(store, rng, "drum.embed", sizes, d)?,
            encoder,
            enc_norm: LayerNorm::new(store, "drum.enc_norm", d)?,
            rel: RelativeBias::new(store, "drum.rel", cfg.heads, cfg.max_distance)?,
            decoder,
            dec_norm: LayerNorm::new(store, "drum.dec_norm", d)?,
            heads: FieldHeads::new(store, rng, "drum.head", d, sizes)?,
            cfg: cfg.clone(),
            vocab: vocab.clone(),
        })
    }

    pub fn field_weights(&self) -> [f64; 4] {
        field_weights(self.vocab.sizes())
    }

    /// Encoded conditioning (T×d) from Z (T×d).
    pub fn memory(&self, g: &mut Graph<'_>, z: Var) -> R {
        let (t, d) = g.value(z).dims2();
        if d != self.cfg.d_model {
            return Err(TensorError::Shape(format!("conditioning width {d} but d_model {}", self.cfg.d_model)));
        }
        let frames: Vec<f64> = (0..t).map(|i| i as f64).collect();
        let pe = g.constant(sinusoidal(&frames, d));
        let mut h = g.add(z, pe)?;
        for b in &self.encoder {
            h = b.forward(g, h, None, None)?;
        }
        self.enc_norm.forward(g, h)
    }

    /// Per-field next-token logits at every input position.
    pub fn decode(&self, g: &mut Graph<'_>, memory: Var, input: &DecoderInput) -> Result<[Var; 4], DrumError> {
        let n = input.len();
        if n == 0 {
            return Err(DrumError::Invalid("decoder input is empty".into()));
        }
        if n > self.cfg.max_len {
            return Err(DrumError::TooLong { len: n, max: self.cfg.max_len });
        }
        let e = self.embed.forward(g, &input.ids)?;
        let pe = g.constant(sinusoidal(&input.times, self.cfg.d_model));
        let mut h = g.add(e, pe)?;
        let mask = input.mask();
        let idx = self.rel.index(&input.groups, &input.groups);
        let bias = self.rel.forward(g, &idx, n, n)?;
        for b in &self.decoder {
            h = b.forward(g, h, memory, &mask, &bias)?;
        }
        let h = self.dec_norm.forward(g, h)?;
        Ok(self.heads.forward(g, h)?)
    }

    /// Teacher-forced loss for one sequence given its conditioning Z.
    pub fn loss(&self, g: &mut Graph<'_>, z: Var, tokens: &[TokenQuad], bpm: f64, weights: [f64; 4]) -> Result<Var, DrumError> {
        let input = DecoderInput::new(tokens, &self.vocab, bpm)?;
        let targets = shifted_targets(tokens, &self.vocab)?;
        let memory = self.memory(g, z)?;
        let logits = self.decode(g, memory, &input)?;
        Ok(weighted_loss(g, &logits, &targets, weights)?)
    }

    /// Fraction of (position, field) argmax predictions equal to the targets.
    pub fn accuracy(&self, store: &ParamStore, z: &Tensor, tokens: &[TokenQuad], bpm: f64) -> Result<f64, DrumError> {
        let mut g = Graph::with_params(store);
        let zv = g.constant(z.clone());
        let input = DecoderInput::new(tokens, &self.vocab, bpm)?;
        let targets = shifted_targets(tokens, &self.vocab)?;
        let memory = self.memory(&mut g, zv)?;
        let logits = self.decode(&mut g, memory, &input)?;
        let mut hit = 0;
        let mut total = 0;
        for f in Field::ALL {
            let l = g.value(logits[f.index()]);
            for (i, t) in targets.iter().enumerate() {
                let want = t[f.index()].unwrap_or(NONE);
                let row = l.row(i);
                let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                hit += usize::from(arg as u32 == want);
                total += 1;
            }
        }
        Ok(hit as f64 / total as f64)
    }
}
