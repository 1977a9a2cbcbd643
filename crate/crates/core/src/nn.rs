//! Layers assembled from graph ops. Each layer owns only parameter names;
//! values live in a `ParamStore`.

use std::rc::Rc;

use rand::Rng;

use crate::tensor::{Graph, ParamStore, Tensor, TensorError, Var};

type R = Result<Var, TensorError>;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: String,
    pub b: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d_in: usize, d_out: usize) -> Result<Self, TensorError> {
        let w = format!("{name}.w");
        let b = format!("{name}.b");
        store.init_matrix(&w, d_in, d_out, rng)?;
        store.init_const(&b, 1, d_out, 0.0)?;
        Ok(Linear { w, b, d_in, d_out })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> R {
        let w = g.param(&self.w)?;
        let b = g.param(&self.b)?;
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: String,
    pub bias: String,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Result<Self, TensorError> {
        let gain = format!("{name}.gain");
        let bias = format!("{name}.bias");
        store.init_const(&gain, 1, d, 1.0)?;
        store.init_const(&bias, 1, d, 0.0)?;
        Ok(LayerNorm { gain, bias })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> R {
        let gain = g.param(&self.gain)?;
        let bias = g.param(&self.bias)?;
        g.layer_norm(x, gain, bias)
    }
}

/// Two-layer position-wise network with a ReLU in between.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, hidden: usize) -> Result<Self, TensorError> {
        Ok(FeedForward {
            l1: Linear::new(store, rng, &format!("{name}.l1"), d, hidden)?,
            l2: Linear::new(store, rng, &format!("{name}.l2"), hidden, d)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> R {
        let h = self.l1.forward(g, x)?;
        let h = g.relu(h)?;
        self.l2.forward(g, h)
    }
}

/// Learned scalar bias per head indexed by a clipped signed distance.
#[derive(Clone, Debug)]
pub struct RelativeBias {
    pub tables: Vec<String>,
    pub max_distance: i64,
}

impl RelativeBias {
    pub fn new(store: &mut ParamStore, name: &str, heads: usize, max_distance: i64) -> Result<Self, TensorError> {
        let width = (2 * max_distance + 1) as usize;
        let mut tables = Vec::with_capacity(heads);
        for h in 0..heads {
            let t = format!("{name}.h{h}");
            store.init_const(&t, 1, width, 0.0)?;
            tables.push(t);
        }
        Ok(RelativeBias { tables, max_distance })
    }

    /// Table index for every (query, key) pair, row-major.
    pub fn index(&self, q_pos: &[i64], k_pos: &[i64]) -> Vec<usize> {
        let m = self.max_distance;
        let mut idx = Vec::with_capacity(q_pos.len() * k_pos.len());
        for &qi in q_pos {
            for &kj in k_pos {
                idx.push(((qi - kj).clamp(-m, m) + m) as usize);
            }
        }
        idx
    }

    /// One bias matrix per head.
    pub fn forward(&self, g: &mut Graph<'_>, index: &[usize], rows: usize, cols: usize) -> Result<Vec<Var>, TensorError> {
        self.tables
            .iter()
            .map(|t| {
                let table = g.param(t)?;
                g.gather(table, index, rows, cols)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d: usize, heads: usize) -> Result<Self, TensorError> {
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Shape(format!("{name}: d_model {d} not divisible by {heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Linear::new(store, rng, &format!("{name}.q"), d, d)?,
            k: Linear::new(store, rng, &format!("{name}.k"), d, d)?,
            v: Linear::new(store, rng, &format!("{name}.v"), d, d)?,
            o: Linear::new(store, rng, &format!("{name}.o"), d, d)?,
            heads,
        })
    }

    /// `mask[i*m + j]` allows query i to see key j. `bias` holds one matrix per head.
    pub fn forward(&self, g: &mut Graph<'_>, xq: Var, xkv: Var, mask: Option<&[bool]>, bias: Option<&[Var]>) -> R {
        let q = self.q.forward(g, xq)?;
        let k = self.k.forward(g, xkv)?;
        let v = self.v.forward(g, xkv)?;
        let dh = self.q.d_out / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            outs.push(g.attention(qh, kh, vh, mask, bias.map(|b| b[h]))?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.o.forward(g, cat)
    }
}

/// Pre-norm self-attention block with a position-wise feed-forward sublayer.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        d: usize,
        heads: usize,
        ff: usize,
    ) -> Result<Self, TensorError> {
        Ok(EncoderBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d)?,
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), d, heads)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d)?,
            ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), d, ff)?,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var, mask: Option<&[bool]>, bias: Option<&[Var]>) -> R {
        let n = self.ln1.forward(g, x)?;
        let a = self.attn.forward(g, n, n, mask, bias)?;
        let x = g.add(x, a)?;
        let n = self.ln2.forward(g, x)?;
        let f = self.ffn.forward(g, n)?;
        g.add(x, f)
    }
}

/// Gated recurrent unit; gate order in the packed weights is (update, reset, candidate).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub wx: Linear,
    pub uh: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, d_in: usize, hidden: usize) -> Result<Self, TensorError> {
        Ok(GruCell {
            wx: Linear::new(store, rng, &format!("{name}.wx"), d_in, 3 * hidden)?,
            uh: Linear::new(store, rng, &format!("{name}.uh"), hidden, 3 * hidden)?,
            hidden,
        })
    }

    /// One step from precomputed input projections `xw` (1×3H).
    pub fn step(&self, g: &mut Graph<'_>, xw: Var, h: Var) -> R {
        let n = self.hidden;
        let hu = self.uh.forward(g, h)?;
        let xz = g.slice_cols(xw, 0, n)?;
        let xr = g.slice_cols(xw, n, n)?;
        let xn = g.slice_cols(xw, 2 * n, n)?;
        let hz = g.slice_cols(hu, 0, n)?;
        let hr = g.slice_cols(hu, n, n)?;
        let hn = g.slice_cols(hu, 2 * n, n)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r)?;
        let rh = g.mul(r, hn)?;
        let cand = g.add(xn, rh)?;
        let cand = g.tanh(cand)?;
        // h' = cand + z ⊙ (h − cand)
        let diff = g.sub(h, cand)?;
        let zd = g.mul(z, diff)?;
        g.add(cand, zd)
    }

    /// Run over the rows of `x` (T×d_in) from a zero state; returns every hidden state (T×H).
    pub fn run(&self, g: &mut Graph<'_>, x: Var) -> R {
        let t = g.value(x).rows();
        let xw = self.wx.forward(g, x)?;
        let mut h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let mut states = Vec::with_capacity(t);
        for i in 0..t {
            let xi = g.slice_rows(xw, i, 1)?;
            h = self.step(g, xi, h)?;
            states.push(h);
        }
        g.concat_rows(&states)
    }
}

/// Spatial graph convolution followed by a temporal convolution, with a
/// residual path and channel normalisation.
#[derive(Clone, Debug)]
pub struct StGcnBlock {
    pub spatial: Linear,
    pub temporal: Linear,
    pub residual: Option<Linear>,
    pub norm: LayerNorm,
    pub kernel: usize,
}

impl StGcnBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Result<Self, TensorError> {
        if kernel % 2 == 0 {
            return Err(TensorError::Shape(format!("{name}: temporal kernel {kernel} must be odd")));
        }
        Ok(StGcnBlock {
            spatial: Linear::new(store, rng, &format!("{name}.spatial"), c_in, c_out)?,
            temporal: Linear::new(store, rng, &format!("{name}.temporal"), kernel * c_out, c_out)?,
            residual: if c_in == c_out {
                None
            } else {
                Some(Linear::new(store, rng, &format!("{name}.residual"), c_in, c_out)?)
            },
            norm: LayerNorm::new(store, &format!("{name}.norm"), c_out)?,
            kernel,
        })
    }

    /// `x` is (T·J)×c_in with frame-major rows.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, adj: &Rc<Tensor>) -> R {
        let joints = adj.rows();
        let a = g.graph_agg(x, adj.clone())?;
        let h = self.spatial.forward(g, a)?;
        let h = g.relu(h)?;
        let u = g.temporal_unfold(h, joints, self.kernel)?;
        let t = self.temporal.forward(g, u)?;
        let res = match &self.residual {
            Some(l) => l.forward(g, x)?,
            None => x,
        };
        let s = g.add(t, res)?;
        let s = self.norm.forward(g, s)?;
        g.relu(s)
    }
}

/// Sinusoidal encoding of real-valued positions, one row per position.
pub fn sinusoidal(positions: &[f64], d: usize) -> Tensor {
    let mut data = vec![0.0; positions.len() * d];
    for (r, &p) in positions.iter().enumerate() {
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[r * d + 2 * i] = (p * freq).sin();
            data[r * d + 2 * i + 1] = (p * freq).cos();
        }
    }
    Tensor::new(&[positions.len(), d], data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::gradcheck::check_params;

    const TOL: f64 = 1e-5;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::new(&[r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn weigh(g: &mut Graph<'_>, x: Var, seed: u64) -> R {
        let (r, c) = g.value(x).dims2();
        let w = g.constant(rand_t(&mut ChaCha8Rng::seed_from_u64(seed), r, c));
        let p = g.mul(x, w)?;
        g.sum(p)
    }

    fn assert_all(reports: Vec<crate::tensor::gradcheck::GradCheck>) {
        for r in reports {
            assert!(r.passes(TOL), "{} rel err {:.3e}", r.name, r.max_rel_error);
        }
    }

    /// Fill every parameter with random values so zero-initialised biases are exercised.
    fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for id in 0..store.len() {
            for v in store.value_mut(id).data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }

    #[test]
    fn gru_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, &mut rng, "gru", 3, 4).unwrap();
        randomize(&mut store, &mut rng);
        let x = rand_t(&mut rng, 5, 3);
        assert_all(
            check_params("gru", &store, 1e-5, |g| {
                let xv = g.constant(x.clone());
                let h = cell.run(g, xv)?;
                weigh(g, h, 2)
            })
            .unwrap(),
        );
    }

    #[test]
    fn attention_with_relative_bias_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", 4, 2).unwrap();
        let rel = RelativeBias::new(&mut store, "rel", 2, 3).unwrap();
        randomize(&mut store, &mut rng);
        let x = rand_t(&mut rng, 5, 4);
        let pos = [0i64, 1, 1, 2, 6];
        let idx = rel.index(&pos, &pos);
        let mask: Vec<bool> = (0..25).map(|k| k % 5 <= k / 5).collect();
        assert_all(
            check_params("mha", &store, 1e-5, |g| {
                let xv = g.constant(x.clone());
                let b = rel.forward(g, &idx, 5, 5)?;
                let y = mha.forward(g, xv, xv, Some(&mask), Some(&b))?;
                weigh(g, y, 4)
            })
            .unwrap(),
        );
    }

    #[test]
    fn cross_attention_and_ffn_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, &mut rng, "vgm", 4, 2).unwrap();
        let ffn = FeedForward::new(&mut store, &mut rng, "ffn", 4, 8).unwrap();
        let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
        randomize(&mut store, &mut rng);
        let x = rand_t(&mut rng, 3, 4);
        let z = rand_t(&mut rng, 6, 4);
        assert_all(
            check_params("xattn", &store, 1e-5, |g| {
                let xv = g.constant(x.clone());
                let zv = g.constant(z.clone());
                let n = ln.forward(g, xv)?;
                let a = mha.forward(g, n, zv, None, None)?;
                let y = ffn.forward(g, a)?;
                weigh(g, y, 6)
            })
            .unwrap(),
        );
    }

    #[test]
    fn stgcn_block_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let b1 = StGcnBlock::new(&mut store, &mut rng, "b1", 2, 3, 3).unwrap();
        let b2 = StGcnBlock::new(&mut store, &mut rng, "b2", 3, 3, 3).unwrap();
        randomize(&mut store, &mut rng);
        let adj = Rc::new(Tensor::from_rows(&[vec![0.5, 0.5, 0.0], vec![1.0 / 3.0; 3], vec![0.0, 0.5, 0.5]]).unwrap());
        let x = rand_t(&mut rng, 4 * 3, 2);
        assert_all(
            check_params("stgcn", &store, 1e-5, |g| {
                let xv = g.constant(x.clone());
                let h = b1.forward(g, xv, &adj)?;
                let h = b2.forward(g, h, &adj)?;
                weigh(g, h, 8)
            })
            .unwrap(),
        );
    }

    #[test]
    fn gru_matches_hand_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, &mut rng, "gru", 2, 2).unwrap();
        randomize(&mut store, &mut rng);
        let x = [0.3, -0.7];
        let mut g = Graph::with_params(&store);
        let xv = g.constant(Tensor::new(&[1, 2], x.to_vec()).unwrap());
        let h = cell.run(&mut g, xv).unwrap();
        let got = g.value(h).data().to_vec();

        let wx = store.get("gru.wx.w").unwrap();
        let bx = store.get("gru.wx.b").unwrap();
        let bu = store.get("gru.uh.b").unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        // zero initial state: U·h vanishes and only its bias remains
        let pre = |k: usize| x[0] * wx.at(0, k) + x[1] * wx.at(1, k) + bx.data()[k] + bu.data()[k];
        for i in 0..2 {
            let z = sig(pre(i));
            let r = sig(x[0] * wx.at(0, 2 + i) + x[1] * wx.at(1, 2 + i) + bx.data()[2 + i] + bu.data()[2 + i]);
            let n = (x[0] * wx.at(0, 4 + i) + x[1] * wx.at(1, 4 + i) + bx.data()[4 + i] + r * bu.data()[4 + i]).tanh();
            let want = (1.0 - z) * n;
            assert!((got[i] - want).abs() < 1e-12, "{i}: {} vs {want}", got[i]);
        }
    }

    #[test]
    fn sinusoidal_rows() {
        let t = sinusoidal(&[0.0, 1.0], 4);
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((t.at(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((t.at(1, 2) - (0.01f64).sin()).abs() < 1e-15);
    }
}
