//! Named parameter registry.
//!
//! Parameters live in one flat, ordered set so that gradient
//! accumulation and optimizer updates always walk them in registration
//! order — a fixed order is what makes training runs bit-reproducible.
//! Values are held behind `Arc` so tapes share them without copying;
//! the optimizer mutates between steps when no tape is alive.

use std::sync::Arc;

use crate::rng::Rng;
use crate::{Error, Result};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Parameter {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    data: Arc<Vec<f64>>,
    #[serde(skip)]
    grad: Vec<f64>,
    /// Set once a backward pass has deposited a gradient for this step.
    #[serde(skip)]
    pub grad_set: bool,
    /// Non-trainable parameters are skipped by the optimizer entirely.
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

/// Per-parameter gradient buffers produced by one tape's backward pass.
/// Slot `i` aligns with `ParamId(i)`; `None` means the parameter did not
/// appear in that graph.
#[derive(Debug)]
pub struct GradBundle {
    pub slots: Vec<Option<Vec<f64>>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::State(format!("duplicate parameter name `{name}`")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "parameter `{name}`: {rows}x{cols} implies {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            rows,
            cols,
            grad: vec![0.0; data.len()],
            data: Arc::new(data),
            grad_set: false,
            trainable: true,
        });
        Ok(id)
    }

    pub fn add_uniform(&mut self, name: &str, rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut Rng) -> Result<ParamId> {
        let data = (0..rows * cols).map(|_| rng.range(lo, hi)).collect();
        self.add(name, rows, cols, data)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, rows, cols, vec![0.0; rows * cols])
    }

    pub fn add_identity(&mut self, name: &str, dim: usize) -> Result<ParamId> {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        self.add(name, dim, dim, data)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    /// Shared handle for zero-copy use as a tape leaf.
    pub fn data_arc(&self, id: ParamId) -> Arc<Vec<f64>> {
        Arc::clone(&self.params[id.0].data)
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        Arc::make_mut(&mut self.params[id.0].data).as_mut_slice()
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn shape(&self, id: ParamId) -> (usize, usize) {
        let p = &self.params[id.0];
        (p.rows, p.cols)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Clear all gradients and `grad_set` flags (start of a step).
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|x| *x = 0.0);
            p.grad_set = false;
        }
    }

    /// Mark every parameter's gradient as populated. The training
    /// step calls this after folding in all chunk bundles: parameters
    /// outside the batch's graph have a true zero gradient, which is
    /// populated, not missing.
    pub fn mark_all_grads_set(&mut self) {
        for p in &mut self.params {
            p.grad_set = true;
        }
    }

    /// Overwrite one parameter's gradient directly (tests, oracles).
    pub fn set_grad(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        p.grad.copy_from_slice(grad);
        p.grad_set = true;
    }

    /// Add a bundle of per-tape gradients. Called once per chunk, in
    /// chunk order, by the training loop.
    pub fn accumulate(&mut self, bundle: &GradBundle) {
        for (i, slot) in bundle.slots.iter().enumerate() {
            if let Some(g) = slot {
                let p = &mut self.params[i];
                for (b, &x) in p.grad.iter_mut().zip(g) {
                    *b += x;
                }
                p.grad_set = true;
            }
        }
    }

    /// Bytewise snapshot of one parameter's values (freeze-rule tests).
    pub fn value_bits(&self, id: ParamId) -> Vec<u64> {
        self.data(id).iter().map(|x| x.to_bits()).collect()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.rows * p.cols).sum()
    }

    /// Scale gradients so their global L2 norm is at most `max_norm`.
    /// Parameters marked in `skip` are excluded (they will not be
    /// updated this step). Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64, skip: Option<&[bool]>) -> f64 {
        let mut sq = 0.0;
        for (i, p) in self.params.iter().enumerate() {
            if !p.trainable || skip.map(|s| s[i]).unwrap_or(false) {
                continue;
            }
            sq += p.grad.iter().map(|g| g * g).sum::<f64>();
        }
        let norm = sq.sqrt();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            for (i, p) in self.params.iter_mut().enumerate() {
                if !p.trainable || skip.map(|s| s[i]).unwrap_or(false) {
                    continue;
                }
                p.grad.iter_mut().for_each(|g| *g *= factor);
            }
        }
        norm
    }

    /// Re-create gradient buffers after deserialization.
    pub fn after_load(&mut self) {
        for p in &mut self.params {
            p.grad = vec![0.0; p.rows * p.cols];
            p.grad_set = false;
        }
    }
}
