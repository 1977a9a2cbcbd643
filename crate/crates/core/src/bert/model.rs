use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BertError;
use crate::midi::{TokenIds, Vocab};
use crate::nn::{EncoderBlock, LayerNorm, RelativeBias};
use crate::sequence::{field_weights, FieldHeads, TokenEmbedding};
use crate::tensor::{Graph, ParamStore, TensorError, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BertConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff: usize,
    pub max_len: usize,
    pub max_distance: i64,
    pub mask_rate: f64,
}

impl Default for BertConfig {
    fn default() -> Self {
        BertConfig {
            hidden: 768,
            layers: 12,
            heads: 12,
            ff: 3072,
            max_len: 4096,
            max_distance: 128,
            mask_rate: 0.15,
        }
    }
}

impl BertConfig {
    pub fn desk() -> Self {
        BertConfig {
            hidden: 32,
            layers: 2,
            heads: 4,
            ff: 64,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct BertModel {
    pub cfg: BertConfig,
    pub vocab: Vocab,
    pub embed: TokenEmbedding,
    pub rel: RelativeBias,
    pub blocks: Vec<EncoderBlock>,
    pub norm: LayerNorm,
    pub heads: FieldHeads,
}

impl BertModel {
    /// Registers parameters under `bert.`.
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: &BertConfig, vocab: &Vocab) -> Result<Self, TensorError> {
        let d = cfg.hidden;
        let sizes = vocab.sizes();
        let blocks = (0..cfg.layers)
            .map(|i| EncoderBlock::new(store, rng, &format!("bert.layer{i}"), d, cfg.heads, cfg.ff))
            .collect::<Result<_, _>>()?;
        Ok(BertModel {
            embed: TokenEmbedding::new(store, rng, "bert.embed", sizes, d)?,
            rel: RelativeBias::new(store, "bert.rel", cfg.heads, cfg.max_distance)?,
            blocks,
            norm: LayerNorm::new(store, "bert.norm", d)?,
            heads: FieldHeads::new(store, rng, "bert.head", d, sizes)?,
            cfg: cfg.clone(),
            vocab: vocab.clone(),
        })
    }

    pub fn field_weights(&self) -> [f64; 4] {
        field_weights(self.vocab.sizes())
    }

    /// Per-field logits at the `rows` positions (all positions when `None`).
    /// Every token attends to every other token.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        ids: &[TokenIds],
        groups: &[u32],
        rows: Option<&[usize]>,
    ) -> Result<[Var; 4], BertError> {
        let n = ids.len();
        if n == 0 {
            return Err(BertError::Invalid("empty sequence".into()));
        }
        if n > self.cfg.max_len {
            return Err(BertError::TooLong { len: n, max: self.cfg.max_len });
        }
        if groups.len() != n {
            return Err(BertError::Invalid(format!("{n} tokens but {} groups", groups.len())));
        }
        let mut h = self.embed.forward(g, ids)?;
        let pos: Vec<i64> = groups.iter().map(|&p| p as i64).collect();
        let idx = self.rel.index(&pos, &pos);
        let bias = self.rel.forward(g, &idx, n, n)?;
        for b in &self.blocks {
            h = b.forward(g, h, None, Some(&bias))?;
        }
        let h = self.norm.forward(g, h)?;
        let h = match rows {
            Some(r) => g.embed(h, r)?,
            None => h,
        };
        Ok(self.heads.forward(g, h)?)
    }
}
