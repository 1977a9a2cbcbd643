//! Central finite-difference checks of recorded gradients.

use super::array::Tensor;
use super::graph::{Graph, Var};
use super::param::ParamStore;
use super::TensorError;

/// Denominator floor for relative errors of near-zero gradient entries.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    /// max over entries of |analytic − numeric| / max(|analytic|, |numeric|, REL_FLOOR)
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

fn compare(name: String, analytic: &[f64], numeric: &[f64]) -> GradCheck {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        let abs = (a - n).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / a.abs().max(n.abs()).max(REL_FLOOR));
    }
    GradCheck {
        name,
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        entries: analytic.len(),
    }
}

/// Check d(loss)/d(input) for free inputs of a function built on a fresh graph.
pub fn check_inputs<F>(name: &str, inputs: &[Tensor], eps: f64, f: F) -> Result<Vec<GradCheck>, TensorError>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |ins: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data()[0])
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let mut reports = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .of(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        let mut numeric = vec![0.0; input.numel()];
        let mut probe: Vec<Tensor> = inputs.to_vec();
        for i in 0..input.numel() {
            let orig = input.data()[i];
            probe[k].data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe[k].data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * eps);
        }
        reports.push(compare(format!("{name}/input{k}"), analytic.data(), &numeric));
    }
    Ok(reports)
}

/// Check d(loss)/d(param) for every parameter in a store.
pub fn check_params<F>(name: &str, store: &ParamStore, eps: f64, f: F) -> Result<Vec<GradCheck>, TensorError>
where
    F: Fn(&mut Graph<'_>) -> Result<Var, TensorError>,
{
    let eval = |s: &ParamStore| -> Result<f64, TensorError> {
        let mut g = Graph::with_params(s);
        let loss = f(&mut g)?;
        Ok(g.value(loss).data()[0])
    };
    let grads = {
        let mut g = Graph::with_params(store);
        let loss = f(&mut g)?;
        g.backward(loss)?.params(store)
    };
    let mut probe = store.clone();
    let mut reports = Vec::new();
    for id in 0..store.len() {
        let n = store.value(id).numel();
        let mut numeric = vec![0.0; n];
        for i in 0..n {
            let orig = store.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + eps;
            let up = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - eps;
            let down = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * eps);
        }
        reports.push(compare(
            format!("{name}/{}", store.names()[id]),
            grads.grads[id].data(),
            &numeric,
        ));
    }
    Ok(reports)
}
