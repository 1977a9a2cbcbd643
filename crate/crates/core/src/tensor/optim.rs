use serde::{Deserialize, Serialize};

use super::param::{ParamGrads, ParamStore};
use super::TensorError;

/// Warmup then inverse-square-root decay:
/// `lr(t) = peak · min(t / warmup, √(warmup / t))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak: f64,
    pub warmup: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            peak: 0.0007,
            warmup: 6000,
        }
    }
}

impl Schedule {
    pub fn lr(&self, t: u64) -> f64 {
        let t = t as f64;
        let w = self.warmup.max(1) as f64;
        self.peak * (t / w).min((w / t).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    /// β2 = 0.9 as published for this model (not the usual 0.999).
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.9,
            eps: 1e-9,
        }
    }
}

/// One Adam update at step `t` (1-based) with learning rate `schedule.lr(t)`.
/// Frozen parameters are left untouched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &ParamGrads,
    t: u64,
    schedule: &Schedule,
    cfg: &AdamConfig,
) -> Result<(), TensorError> {
    if t == 0 {
        return Err(TensorError::Shape("adam_step: step counter starts at 1".into()));
    }
    if grads.grads.len() != store.len() {
        return Err(TensorError::Shape(format!(
            "adam_step: {} gradients for {} parameters",
            grads.grads.len(),
            store.len()
        )));
    }
    let lr = schedule.lr(t);
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    for id in 0..store.len() {
        let g = &grads.grads[id];
        if g.shape() != store.value(id).shape() {
            return Err(TensorError::Shape(format!(
                "adam_step: gradient {:?} vs parameter {} {:?}",
                g.shape(),
                store.names()[id],
                store.value(id).shape()
            )));
        }
        if store.is_frozen(id) {
            continue;
        }
        let m = store.first_moment[id].data_mut();
        for (mv, gv) in m.iter_mut().zip(g.data()) {
            *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
        }
        let v = store.second_moment[id].data_mut();
        for (vv, gv) in v.iter_mut().zip(g.data()) {
            *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
        }
        let (m, v) = (store.first_moment[id].clone(), store.second_moment[id].clone());
        for ((p, mv), vv) in store.value_mut(id).data_mut().iter_mut().zip(m.data()).zip(v.data()) {
            *p -= lr * (mv / bc1) / ((vv / bc2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
