//! Finite-difference checks of every layer on miniature shapes, as one suite.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::drum::vgm;
use crate::motion::{BeatHead, MotionConfig};
use crate::nn::{FeedForward, GruCell, LayerNorm, MultiHeadAttention, RelativeBias, StGcnBlock};
use crate::sequence::weighted_loss;
use crate::tensor::gradcheck::{check_params, GradCheck};
use crate::tensor::{Graph, ParamStore, Tensor, TensorError, Var};

/// Relative-error bound every entry must stay under.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
const EPS: f64 = 1e-5;

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(&[r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

// A fixed random projection turns any output into a scalar with dense gradients.
fn weigh(g: &mut Graph<'_>, x: Var, seed: u64) -> Result<Var, TensorError> {
    let (r, c) = g.value(x).dims2();
    let w = g.constant(rand_t(&mut ChaCha8Rng::seed_from_u64(seed), r, c));
    let p = g.mul(x, w)?;
    g.sum(p)
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in 0..store.len() {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
}

fn graph_conv() -> Result<Vec<GradCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let b1 = StGcnBlock::new(&mut store, &mut rng, "b1", 2, 3, 3)?;
    let b2 = StGcnBlock::new(&mut store, &mut rng, "b2", 3, 3, 3)?;
    randomize(&mut store, &mut rng);
    let adj = Rc::new(Tensor::from_rows(&[vec![0.5, 0.5, 0.0], vec![1.0 / 3.0; 3], vec![0.0, 0.5, 0.5]])?);
    let x = rand_t(&mut rng, 4 * 3, 2);
    check_params("graph_conv", &store, EPS, |g| {
        let xv = g.constant(x.clone());
        let h = b1.forward(g, xv, &adj)?;
        let h = b2.forward(g, h, &adj)?;
        let h = g.group_mean(h, 3)?;
        weigh(g, h, 1)
    })
}

fn gru() -> Result<Vec<GradCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, &mut rng, "gru", 3, 4)?;
    randomize(&mut store, &mut rng);
    let x = rand_t(&mut rng, 5, 3);
    check_params("gru", &store, EPS, |g| {
        let xv = g.constant(x.clone());
        let h = cell.run(g, xv)?;
        weigh(g, h, 2)
    })
}

fn msa() -> Result<Vec<GradCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let ln = LayerNorm::new(&mut store, "ln", 4)?;
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "msa", 4, 2)?;
    let rel = RelativeBias::new(&mut store, "rel", 2, 3)?;
    randomize(&mut store, &mut rng);
    let x = rand_t(&mut rng, 5, 4);
    let pos = [0i64, 1, 1, 2, 6];
    let idx = rel.index(&pos, &pos);
    let mask: Vec<bool> = (0..25).map(|k| k % 5 <= k / 5).collect();
    check_params("msa", &store, EPS, |g| {
        let xv = g.constant(x.clone());
        let n = ln.forward(g, xv)?;
        let b = rel.forward(g, &idx, 5, 5)?;
        let y = mha.forward(g, n, n, Some(&mask), Some(&b))?;
        weigh(g, y, 3)
    })
}

fn vgm_block() -> Result<Vec<GradCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::new();
    let attn = MultiHeadAttention::new(&mut store, &mut rng, "vgm", 4, 2)?;
    randomize(&mut store, &mut rng);
    let d = rand_t(&mut rng, 3, 4);
    let z = rand_t(&mut rng, 6, 4);
    check_params("vgm", &store, EPS, |g| {
        let dv = g.constant(d.clone());
        let zv = g.constant(z.clone());
        let y = vgm(g, &attn, dv, zv)?;
        weigh(g, y, 4)
    })
}

fn feed_forward() -> Result<Vec<GradCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let ffn = FeedForward::new(&mut store, &mut rng, "ffn", 4, 8)?;
    randomize(&mut store, &mut rng);
    let x = rand_t(&mut rng, 3, 4);
    check_params("ffn", &store, EPS, |g| {
        let xv = g.constant(x.clone());
        let y = ffn.forward(g, xv)?;
        weigh(g, y, 5)
    })
}

fn loss_heads() -> Result<Vec<GradCheck>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut store = ParamStore::new();
    let cfg = MotionConfig {
        feature_dim: 4,
        beat_layers: 1,
        beat_heads: 2,
        beat_ff: 4,
        ..MotionConfig::desk()
    };
    let head = BeatHead::new(&mut store, &mut rng, "beat", &cfg)?;
    let sizes = [5usize, 3, 2, 4];
    for (k, &n) in sizes.iter().enumerate() {
        store.insert(&format!("field{k}"), rand_t(&mut rng, 3, n))?;
    }
    randomize(&mut store, &mut rng);
    let zm = rand_t(&mut rng, 6, 4);
    let targets = [[Some(1), Some(2), None, Some(3)], [Some(4), None, Some(1), Some(0)], [Some(0), Some(1), Some(1), None]];
    check_params("loss_heads", &store, EPS, |g| {
        let z = g.constant(zm.clone());
        let l = head.logits(g, z)?;
        let beat = head.loss(g, l, &[1, 0, 0, 1, 0, 0])?;
        let fields = [g.param("field0")?, g.param("field1")?, g.param("field2")?, g.param("field3")?];
        let tok = weighted_loss(g, &fields, &targets, [1.0, 0.5, 0.25, 2.0])?;
        g.add(beat, tok)
    })
}

/// Every suite's reports: graph convolution, recurrent cell, masked
/// self-attention with relative bias, cross-attention, feed-forward and the
/// loss heads.
pub fn layer_suites() -> Result<Vec<GradCheck>, TensorError> {
    let mut all = Vec::new();
    for suite in [graph_conv, gru, msa, vgm_block, feed_forward, loss_heads] {
        all.extend(suite()?);
    }
    Ok(all)
}
