//! AdamW with decoupled weight decay.
//!
//! For each parameter `p` with averaged gradient `g` at step `t`:
//!
//! ```text
//! m <- b1 m + (1 - b1) g
//! v <- b2 v + (1 - b2) g^2
//! p <- p - lr wd p                       (decayed tensors only)
//! p <- p - lr (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
//! ```

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = |id| vec![0.0; store.get(id).numel()];
        Self {
            step: 0,
            first: store.ids().map(zeros).collect(),
            second: store.ids().map(zeros).collect(),
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }
}

/// One update from the mean of the gradients accumulated in `store`.
///
/// Gradients are divided by [`ParamStore::pending_grads`]; they are left in
/// place for the caller to clear.
pub fn adamw_step(store: &mut ParamStore, state: &mut OptimizerState, cfg: &TrainConfig) -> Result<()> {
    let pending = store.pending_grads();
    if pending == 0 {
        return Err(Error::InvalidArgument("optimizer step without accumulated gradients".into()));
    }
    if state.first.len() != store.len() {
        return Err(Error::Shape(format!(
            "optimizer state tracks {} tensors, store holds {}",
            state.first.len(),
            store.len()
        )));
    }
    let scale = 1.0 / pending as f64;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let decay = store.decays(id);
        let tensor = store.get_mut(id);
        let grad: Vec<f64> = tensor
            .grad()
            .expect("stored parameters require grad")
            .iter()
            .map(|g| g * scale)
            .collect();
        let (m, v) = (&mut state.first[id.index()], &mut state.second[id.index()]);
        for (j, p) in tensor.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            if decay {
                *p -= cfg.lr * cfg.weight_decay * *p;
            }
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
        if !tensor.is_finite() {
            return Err(Error::Numeric(format!("parameter {} became non-finite", store.name(id))));
        }
    }
    Ok(())
}
