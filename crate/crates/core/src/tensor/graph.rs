//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Parameters are read
//! from a [`ParamStore`] the first time they are referenced and cached, so a
//! parameter used at many time steps is a single leaf whose gradient
//! accumulates. Backward walks the tape once in reverse, in recording order,
//! so gradients are bit-reproducible.

use std::collections::HashMap;
use std::rc::Rc;

use super::array::{gemm, softmax_in_place, Tensor};
use super::param::{ParamGrads, ParamStore};
use super::TensorError;

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Embed { table: Var, ids: Rc<[usize]> },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Sum(Var),
    MeanRows(Var),
    CrossEntropy { logits: Var, targets: Rc<[usize]>, weights: Rc<[f64]>, probs: Tensor },
    Gather { table: Var, index: Rc<[usize]> },
    GraphAgg { x: Var, adj: Rc<Tensor> },
    TemporalUnfold { x: Var, joints: usize, kernel: usize },
    GroupMean { x: Var, group: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: Option<usize>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, Var)>,
    n_params: usize,
    names: Vec<String>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded value, if it was reached.
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every parameter in the store. Parameters the loss does not
    /// reach get zeros and are listed in `unreached`.
    pub fn params(&self, store: &ParamStore) -> ParamGrads {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.n_params];
        for &(pid, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                grads[pid] = Some(g.clone());
            }
        }
        let mut unreached = Vec::new();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.unwrap_or_else(|| {
                    unreached.push(self.names[i].clone());
                    Tensor::zeros(store.value(i).shape())
                })
            })
            .collect();
        ParamGrads { grads, unreached }
    }
}

pub struct Graph<'s> {
    nodes: Vec<Node>,
    store: Option<&'s ParamStore>,
    param_vars: HashMap<usize, Var>,
}

type R = Result<Var, TensorError>;

fn shape_err(op: &str, msg: String) -> TensorError {
    TensorError::Shape(format!("{op}: {msg}"))
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<'s> Graph<'s> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            store: None,
            param_vars: HashMap::new(),
        }
    }

    pub fn with_params(store: &'s ParamStore) -> Self {
        Graph {
            nodes: Vec::new(),
            store: Some(store),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var], name: &str) -> R {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name.to_string()));
        }
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A free input whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reference a named parameter of the attached store.
    pub fn param(&mut self, name: &str) -> R {
        let store = self
            .store
            .ok_or_else(|| TensorError::UnknownParam(format!("{name} (graph has no parameter store)")))?;
        let id = store
            .id(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
            needs_grad: !store.is_frozen(id),
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        Ok(v)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> R {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("lhs cols={k} but rhs rows={k2}")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(false, self.value(a), false, self.value(b), &mut out, 0.0);
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> R {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul_bt", format!("lhs cols={k} but rhs cols={k2}")));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm(false, self.value(a), true, self.value(b), &mut out, 0.0);
        self.push(out, Op::MatMulBt(a, b), &[a, b], "matmul_bt")
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &str, f: impl Fn(f64, f64) -> f64) -> R {
        self.same_shape(name, a, b)?;
        let (r, c) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(Tensor::new(&[r, c], data)?, op, &[a, b], name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> R {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> R {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> R {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Add a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> R {
        let (m, n) = self.dims(a);
        let (r, n2) = self.dims(row);
        if r != 1 || n != n2 {
            return Err(shape_err("add_row", format!("matrix is {m}x{n}, row is {r}x{n2}")));
        }
        let mut out = self.value(a).clone();
        let rv = self.value(row).data().to_vec();
        for i in 0..m {
            for (o, b) in out.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&rv) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row), &[a, row], "add_row")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> R {
        let out = self.value(a).map(|x| x * s);
        self.push(out, Op::Scale(a, s), &[a], "scale")
    }

    pub fn relu(&mut self, a: Var) -> R {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a], "relu")
    }

    pub fn tanh(&mut self, a: Var) -> R {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a], "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> R {
        let out = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a), &[a], "sigmoid")
    }

    /// Row-wise softmax. Entries where `mask[i*cols + j]` is false get
    /// probability zero; a row with no allowed entry is an error.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> R {
        let (r, c) = self.dims(a);
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(shape_err("softmax", format!("mask has {} entries for {r}x{c}", m.len())));
            }
        }
        let mut out = self.value(a).clone();
        for i in 0..r {
            let allowed = mask.map(|m| &m[i * c..(i + 1) * c]);
            if !softmax_in_place(&mut out.data_mut()[i * c..(i + 1) * c], allowed) {
                return Err(TensorError::FullyMasked { row: i });
            }
        }
        self.push(out, Op::Softmax(a), &[a], "softmax")
    }

    /// Normalize each row to zero mean and unit variance, then apply gain and bias (both 1×n).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> R {
        const EPS: f64 = 1e-12;
        let (r, c) = self.dims(x);
        if self.dims(gain) != (1, c) || self.dims(bias) != (1, c) {
            return Err(shape_err("layer_norm", format!("input has {c} cols; gain/bias must be 1x{c}")));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(&[r, c], out)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
            "layer_norm",
        )
    }

    /// Gather rows of an embedding table.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> R {
        let (n, d) = self.dims(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(shape_err("embed", format!("id {id} out of range for table with {n} rows")));
            }
            out.extend_from_slice(self.value(table).row(id));
        }
        let out = Tensor::new(&[ids.len(), d], out)?;
        self.push(out, Op::Embed { table, ids: ids.into() }, &[table], "embed")
    }

    pub fn transpose(&mut self, a: Var) -> R {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a], "transpose")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> R {
        let r = self.dims(parts[0]).0;
        if parts.iter().any(|p| self.dims(*p).0 != r) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|p| self.dims(*p).1).sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for p in parts {
            let (_, c) = self.dims(*p);
            let v = self.value(*p).data();
            for i in 0..r {
                out[i * total + off..i * total + off + c].copy_from_slice(&v[i * c..(i + 1) * c]);
            }
            off += c;
        }
        let out = Tensor::new(&[r, total], out)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> R {
        let (r, c) = self.dims(a);
        if start + len > c {
            return Err(shape_err("slice_cols", format!("[{start}, {}) exceeds {c} cols", start + len)));
        }
        let v = self.value(a).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(&[r, len], out)?;
        self.push(out, Op::SliceCols(a, start), &[a], "slice_cols")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> R {
        let c = self.dims(parts[0]).1;
        if parts.iter().any(|p| self.dims(*p).1 != c) {
            return Err(shape_err("concat_rows", "column counts differ".into()));
        }
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let r = out.len() / c.max(1);
        let out = Tensor::new(&[r, c], out)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), parts, "concat_rows")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> R {
        let (r, c) = self.dims(a);
        if start + len > r {
            return Err(shape_err("slice_rows", format!("[{start}, {}) exceeds {r} rows", start + len)));
        }
        let out = Tensor::new(&[len, c], self.value(a).data()[start * c..(start + len) * c].to_vec())?;
        self.push(out, Op::SliceRows(a, start), &[a], "slice_rows")
    }

    pub fn sum(&mut self, a: Var) -> R {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a], "sum")
    }

    /// Column-wise mean over rows: m×n → 1×n.
    pub fn mean_rows(&mut self, a: Var) -> R {
        let (r, c) = self.dims(a);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(self.value(a).row(i)) {
                *o += v / r as f64;
            }
        }
        let out = Tensor::new(&[1, c], out)?;
        self.push(out, Op::MeanRows(a), &[a], "mean_rows")
    }

    /// `Σ_i weights[i] · −log softmax(logits_i)[targets[i]]` as a 1×1 value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> R {
        let (r, c) = self.dims(logits);
        if targets.len() != r || weights.len() != r {
            return Err(shape_err(
                "cross_entropy",
                format!("{r} rows but {} targets and {} weights", targets.len(), weights.len()),
            ));
        }
        let mut probs = self.value(logits).clone();
        let mut loss = 0.0;
        for i in 0..r {
            if targets[i] >= c {
                return Err(shape_err("cross_entropy", format!("target {} >= {c} classes", targets[i])));
            }
            let row = &mut probs.data_mut()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += weights[i] * (lse - row[targets[i]]);
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.into(),
                weights: weights.into(),
                probs,
            },
            &[logits],
            "cross_entropy",
        )
    }

    /// Build an `rows×cols` matrix whose entries are picked from a 1×k table.
    pub fn gather(&mut self, table: Var, index: &[usize], rows: usize, cols: usize) -> R {
        let (_, k) = self.dims(table);
        if index.len() != rows * cols {
            return Err(shape_err("gather", format!("{} indices for {rows}x{cols}", index.len())));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(index.len());
        for &i in index {
            if i >= k {
                return Err(shape_err("gather", format!("index {i} out of range for table of {k}")));
            }
            out.push(t[i]);
        }
        let out = Tensor::new(&[rows, cols], out)?;
        self.push(out, Op::Gather { table, index: index.into() }, &[table], "gather")
    }

    /// Spatial aggregation over a skeleton graph: rows of `x` are ordered
    /// frame-major `(t, j)`; every frame block is left-multiplied by `adj` (J×J).
    pub fn graph_agg(&mut self, x: Var, adj: Rc<Tensor>) -> R {
        let (rows, c) = self.dims(x);
        let (j, j2) = adj.dims2();
        if j != j2 || j == 0 || rows % j != 0 {
            return Err(shape_err("graph_agg", format!("{rows} rows is not a multiple of {j} joints")));
        }
        let frames = rows / j;
        let xv = self.value(x).data();
        let mut out = vec![0.0; rows * c];
        for t in 0..frames {
            for a in 0..j {
                let o = &mut out[(t * j + a) * c..(t * j + a + 1) * c];
                for b in 0..j {
                    let w = adj.at(a, b);
                    if w != 0.0 {
                        for (ov, xv) in o.iter_mut().zip(&xv[(t * j + b) * c..(t * j + b + 1) * c]) {
                            *ov += w * xv;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(&[rows, c], out)?;
        self.push(out, Op::GraphAgg { x, adj }, &[x], "graph_agg")
    }

    /// Temporal im2col: row `(t, j)` of the result concatenates rows
    /// `(t + o - kernel/2, j)` for `o in 0..kernel`, zero-padded, so a matmul
    /// with a `(kernel·C)×C'` weight is a stride-1 temporal convolution.
    pub fn temporal_unfold(&mut self, x: Var, joints: usize, kernel: usize) -> R {
        let (rows, c) = self.dims(x);
        if joints == 0 || rows % joints != 0 || kernel % 2 == 0 {
            return Err(shape_err(
                "temporal_unfold",
                format!("{rows} rows, {joints} joints, kernel {kernel} (must be odd)"),
            ));
        }
        let frames = rows / joints;
        let half = kernel / 2;
        let xv = self.value(x).data();
        let width = kernel * c;
        let mut out = vec![0.0; rows * width];
        for t in 0..frames {
            for j in 0..joints {
                let dst = (t * joints + j) * width;
                for o in 0..kernel {
                    let src_t = t as isize + o as isize - half as isize;
                    if src_t < 0 || src_t >= frames as isize {
                        continue;
                    }
                    let src = (src_t as usize * joints + j) * c;
                    out[dst + o * c..dst + (o + 1) * c].copy_from_slice(&xv[src..src + c]);
                }
            }
        }
        let out = Tensor::new(&[rows, width], out)?;
        self.push(out, Op::TemporalUnfold { x, joints, kernel }, &[x], "temporal_unfold")
    }

    /// Mean over consecutive blocks of `group` rows: (n·group)×c → n×c.
    pub fn group_mean(&mut self, x: Var, group: usize) -> R {
        let (rows, c) = self.dims(x);
        if group == 0 || rows % group != 0 {
            return Err(shape_err("group_mean", format!("{rows} rows not divisible into groups of {group}")));
        }
        let n = rows / group;
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for i in 0..rows {
            for (o, v) in out[(i / group) * c..(i / group + 1) * c].iter_mut().zip(&xv[i * c..(i + 1) * c]) {
                *o += v / group as f64;
            }
        }
        let out = Tensor::new(&[n, c], out)?;
        self.push(out, Op::GroupMean { x, group }, &[x], "group_mean")
    }

    /// Scaled dot-product attention `softmax(QKᵀ/√d + bias, mask) · V`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&[bool]>, bias: Option<Var>) -> R {
        let (_, dq) = self.dims(q);
        let (m, dk) = self.dims(k);
        let (mv, _) = self.dims(v);
        if dq != dk {
            return Err(shape_err("attention", format!("d_q={dq} but d_k={dk}")));
        }
        if m != mv {
            return Err(shape_err("attention", format!("{m} keys but {mv} values")));
        }
        let scores = self.matmul_bt(q, k)?;
        let mut scores = self.scale(scores, 1.0 / (dk as f64).sqrt())?;
        if let Some(b) = bias {
            scores = self.add(scores, b)?;
        }
        let weights = self.softmax(scores, mask)?;
        self.matmul(weights, v)
    }

    /// Reverse sweep from a 1×1 loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let (n_params, names) = match self.store {
            Some(s) => (s.len(), s.names().to_vec()),
            None => (0, Vec::new()),
        };
        let mut params: Vec<(usize, Var)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, nd)| nd.param.map(|p| (p, Var(i))))
            .collect();
        params.sort();
        Ok(Gradients {
            grads,
            params,
            n_params,
            names,
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let mut da = Tensor::zeros(val(*a).shape());
                    gemm(false, g, true, val(*b), &mut da, 0.0);
                    acc(*a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = Tensor::zeros(val(*b).shape());
                    gemm(true, val(*a), false, g, &mut db, 0.0);
                    acc(*b, db);
                }
            }
            Op::MatMulBt(a, b) => {
                // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                if self.nodes[a.0].needs_grad {
                    let mut da = Tensor::zeros(val(*a).shape());
                    gemm(false, g, false, val(*b), &mut da, 0.0);
                    acc(*a, da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = Tensor::zeros(val(*b).shape());
                    gemm(true, g, false, val(*a), &mut db, 0.0);
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let ga = zip_map(g, val(*b), |x, y| x * y);
                let gb = zip_map(g, val(*a), |x, y| x * y);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let (r, c) = g.dims2();
                let mut gr = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in gr.iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*row, Tensor::new(&[1, c], gr).unwrap());
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::Relu(a) => acc(*a, zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Tanh(a) => acc(*a, zip_map(g, &node.value, |gv, y| gv * (1.0 - y * y))),
            Op::Sigmoid(a) => acc(*a, zip_map(g, &node.value, |gv, y| gv * y * (1.0 - y))),
            Op::Softmax(a) => {
                let (r, c) = g.dims2();
                let y = &node.value;
                let mut da = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        da.data_mut()[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, da);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = g.dims2();
                let gv = val(*gain).data();
                let mut dx = vec![0.0; r * c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    let gr = g.row(i);
                    let xh = &xhat[i * c..(i + 1) * c];
                    let mut mean_dy = 0.0;
                    let mut mean_dy_xh = 0.0;
                    for j in 0..c {
                        let dyh = gr[j] * gv[j];
                        mean_dy += dyh;
                        mean_dy_xh += dyh * xh[j];
                        dg[j] += gr[j] * xh[j];
                        db[j] += gr[j];
                    }
                    mean_dy /= c as f64;
                    mean_dy_xh /= c as f64;
                    for j in 0..c {
                        let dyh = gr[j] * gv[j];
                        dx[i * c + j] = inv_std[i] * (dyh - mean_dy - xh[j] * mean_dy_xh);
                    }
                }
                acc(*x, Tensor::new(&[r, c], dx).unwrap());
                acc(*gain, Tensor::new(&[1, c], dg).unwrap());
                acc(*bias, Tensor::new(&[1, c], db).unwrap());
            }
            Op::Embed { table, ids } => {
                let mut dt = Tensor::zeros(val(*table).shape());
                let d = dt.cols();
                for (i, &id) in ids.iter().enumerate() {
                    for (o, v) in dt.data_mut()[id * d..(id + 1) * d].iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*table, dt);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ConcatCols(parts) => {
                let (r, total) = g.dims2();
                let mut off = 0;
                for p in parts {
                    let c = val(*p).cols();
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        d.extend_from_slice(&g.data()[i * total + off..i * total + off + c]);
                    }
                    acc(*p, Tensor::new(&[r, c], d).unwrap());
                    off += c;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).dims2();
                let len = g.cols();
                let mut d = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    d.data_mut()[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for p in parts {
                    let r = val(*p).rows();
                    acc(*p, Tensor::new(&[r, c], g.data()[off * c..(off + r) * c].to_vec()).unwrap());
                    off += r;
                }
            }
            Op::SliceRows(a, start) => {
                let (r, c) = val(*a).dims2();
                let mut d = Tensor::zeros(&[r, c]);
                let len = g.rows();
                d.data_mut()[start * c..(start + len) * c].copy_from_slice(g.data());
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape(), g.data()[0])),
            Op::MeanRows(a) => {
                let (r, c) = val(*a).dims2();
                let mut d = Vec::with_capacity(r * c);
                for _ in 0..r {
                    d.extend(g.data().iter().map(|v| v / r as f64));
                }
                acc(*a, Tensor::new(&[r, c], d).unwrap());
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let scale = g.data()[0];
                let mut d = probs.clone();
                let c = d.cols();
                for (i, (&t, &w)) in targets.iter().zip(weights.iter()).enumerate() {
                    let row = &mut d.data_mut()[i * c..(i + 1) * c];
                    row[t] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= w * scale;
                    }
                }
                acc(*logits, d);
            }
            Op::Gather { table, index } => {
                let mut d = Tensor::zeros(val(*table).shape());
                for (&i, &gv) in index.iter().zip(g.data()) {
                    d.data_mut()[i] += gv;
                }
                acc(*table, d);
            }
            Op::GraphAgg { x, adj } => {
                let (rows, c) = g.dims2();
                let j = adj.rows();
                let mut d = vec![0.0; rows * c];
                for t in 0..rows / j {
                    for a in 0..j {
                        let ga = &g.data()[(t * j + a) * c..(t * j + a + 1) * c];
                        for b in 0..j {
                            let w = adj.at(a, b);
                            if w != 0.0 {
                                for (o, v) in d[(t * j + b) * c..(t * j + b + 1) * c].iter_mut().zip(ga) {
                                    *o += w * v;
                                }
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(&[rows, c], d).unwrap());
            }
            Op::TemporalUnfold { x, joints, kernel } => {
                let (rows, c) = val(*x).dims2();
                let frames = rows / joints;
                let half = kernel / 2;
                let width = kernel * c;
                let mut d = vec![0.0; rows * c];
                for t in 0..frames {
                    for j in 0..*joints {
                        let src = (t * joints + j) * width;
                        for o in 0..*kernel {
                            let dst_t = t as isize + o as isize - half as isize;
                            if dst_t < 0 || dst_t >= frames as isize {
                                continue;
                            }
                            let dst = (dst_t as usize * joints + j) * c;
                            for (dv, gv) in d[dst..dst + c].iter_mut().zip(&g.data()[src + o * c..src + (o + 1) * c]) {
                                *dv += gv;
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(&[rows, c], d).unwrap());
            }
            Op::GroupMean { x, group } => {
                let (rows, c) = val(*x).dims2();
                let mut d = vec![0.0; rows * c];
                for i in 0..rows {
                    for (o, v) in d[i * c..(i + 1) * c].iter_mut().zip(g.row(i / group)) {
                        *o = v / *group as f64;
                    }
                }
                acc(*x, Tensor::new(&[rows, c], d).unwrap());
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .unwrap()
}
