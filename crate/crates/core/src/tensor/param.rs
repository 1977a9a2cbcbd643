use std::collections::HashMap;

use rand::Rng;

use super::array::Tensor;
use super::TensorError;

/// Named trainable tensors with stable insertion order, plus Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    frozen: Vec<bool>,
    index: HashMap<String, usize>,
    pub(crate) first_moment: Vec<Tensor>,
    pub(crate) second_moment: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn is_frozen(&self, id: usize) -> bool {
        self.frozen[id]
    }

    pub fn freeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = true);
    }

    /// Freeze every parameter whose name starts with `prefix`; returns how many matched.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (name, f) in self.names.iter().zip(self.frozen.iter_mut()) {
            if name.starts_with(prefix) {
                *f = true;
                n += 1;
            }
        }
        n
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<usize, TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let id = self.names.len();
        self.first_moment.push(Tensor::zeros(value.shape()));
        self.second_moment.push(Tensor::zeros(value.shape()));
        self.names.push(name.to_string());
        self.values.push(value);
        self.frozen.push(false);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub(crate) fn insert_with_state(
        &mut self,
        name: &str,
        value: Tensor,
        frozen: bool,
        moments: Option<(Tensor, Tensor)>,
    ) -> Result<usize, TensorError> {
        let id = self.insert(name, value)?;
        self.frozen[id] = frozen;
        if let Some((m, v)) = moments {
            if m.shape() != self.values[id].shape() || v.shape() != self.values[id].shape() {
                return Err(TensorError::Shape(format!("optimizer state for {name} has the wrong shape")));
            }
            self.first_moment[id] = m;
            self.second_moment[id] = v;
        }
        Ok(id)
    }

    /// Glorot-uniform initialised `rows×cols` matrix.
    pub fn init_matrix(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<usize, TensorError> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
        self.insert(name, Tensor::new(&[rows, cols], data)?)
    }

    /// Small normal-ish initialisation for embedding tables.
    pub fn init_embedding(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<usize, TensorError> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-0.1..0.1)).collect();
        self.insert(name, Tensor::new(&[rows, cols], data)?)
    }

    pub fn init_const(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> Result<usize, TensorError> {
        self.insert(name, Tensor::full(&[rows, cols], v))
    }

    /// Copy every parameter of `other` in under `prefix`.
    pub fn absorb(&mut self, prefix: &str, other: &ParamStore) -> Result<(), TensorError> {
        for i in 0..other.len() {
            self.insert_with_state(
                &format!("{prefix}{}", other.names[i]),
                other.values[i].clone(),
                other.frozen[i],
                Some((other.first_moment[i].clone(), other.second_moment[i].clone())),
            )?;
        }
        Ok(())
    }

    /// The parameters whose names start with `prefix`, with the prefix stripped.
    pub fn extract(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for i in 0..self.len() {
            if let Some(rest) = self.names[i].strip_prefix(prefix) {
                out.insert_with_state(
                    rest,
                    self.values[i].clone(),
                    self.frozen[i],
                    Some((self.first_moment[i].clone(), self.second_moment[i].clone())),
                )
                .expect("names are unique within a store");
            }
        }
        out
    }
}

/// Gradients aligned with a store's parameter ids.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub grads: Vec<Tensor>,
    /// Parameters the loss did not depend on (their gradient is zero).
    pub unreached: Vec<String>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        ParamGrads {
            grads: (0..store.len()).map(|i| Tensor::zeros(store.value(i).shape())).collect(),
            unreached: Vec::new(),
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }
}
