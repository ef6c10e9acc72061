//! Adam optimizer with bias correction.

use super::params::{ParamId, ParamSet};
use crate::{Error, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Completed update steps.
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: params.iter().map(|(_, p)| vec![0.0; p.rows * p.cols]).collect(),
            v: params.iter().map(|(_, p)| vec![0.0; p.rows * p.cols]).collect(),
        }
    }

    pub fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        (&self.m[id.index()], &self.v[id.index()])
    }
}

/// One Adam update over every trainable parameter.
///
/// `skip[i] == true` exempts parameter `i` entirely — value, moments and
/// step scaling are all left untouched for it (the expert-freeze rule
/// relies on this being a true no-op, not a zero-gradient update).
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, skip: Option<&[bool]>) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::State(format!(
            "optimizer tracks {} parameters, set has {}",
            state.m.len(),
            params.len()
        )));
    }
    // Validate before mutating anything so a failed call changes no state.
    for (id, p) in params.iter() {
        if !p.trainable || skip.map(|s| s[id.index()]).unwrap_or(false) {
            continue;
        }
        if !p.grad_set {
            return Err(Error::State(format!("parameter `{}` has no gradient", p.name)));
        }
    }
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    for i in 0..params.len() {
        let id = ParamId(i);
        let (trainable, skipped) = {
            let p = params.get(id);
            (p.trainable, skip.map(|s| s[i]).unwrap_or(false))
        };
        if !trainable || skipped {
            continue;
        }
        let grad = params.grad(id).to_vec();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let data = params.data_mut(id);
        for j in 0..data.len() {
            let g = grad[j];
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
