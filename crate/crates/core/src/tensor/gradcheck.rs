//! Finite-difference verification of tape gradients.

use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::parallel::ordered_chunk_map;
use crate::{Error, Result};

/// Per-parameter worst relative error between tape adjoints and central
/// finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

/// Relative error with a floor so elements whose true gradient is ~0
/// compare absolutely instead of dividing noise by noise.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare tape gradients of the scalar graph built by `build` against
/// central finite differences, element by element.
///
/// `build` must be deterministic (no dropout) and must construct the
/// loss from `params` alone. Elements are checked in parallel; each
/// worker perturbs its own copy of the parameters.
pub fn grad_check<F>(params: &ParamSet, eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet, &mut Tape) -> Result<Var> + Sync,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Param(format!("grad_check eps must be in [1e-6, 1e-4], got {eps}")));
    }

    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = build(ps, &mut tape)?;
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::Eval(format!("objective is not finite: {v}")));
        }
        Ok(v)
    };
    // Fail fast on a non-finite objective before any perturbation work.
    eval(params)?;

    let mut tape = Tape::new();
    let loss = build(params, &mut tape)?;
    let bundle = tape.backward(loss)?;
    drop(tape);

    // Flatten every (parameter, element) that participates in the graph.
    let mut entries_idx: Vec<(usize, usize)> = Vec::new();
    for (slot, grad) in bundle.slots.iter().enumerate() {
        if let Some(g) = grad {
            for j in 0..g.len() {
                entries_idx.push((slot, j));
            }
        }
    }

    let numeric: Vec<Result<Vec<f64>>> = ordered_chunk_map(entries_idx.len(), 64, |range| {
        let mut local = params.clone();
        let mut out = Vec::with_capacity(range.len());
        for &(slot, j) in &entries_idx[range] {
            let id = super::params::ParamId(slot);
            let orig = local.data(id)[j];
            local.data_mut(id)[j] = orig + eps;
            let f_plus = eval(&local)?;
            local.data_mut(id)[j] = orig - eps;
            let f_minus = eval(&local)?;
            local.data_mut(id)[j] = orig;
            out.push((f_plus - f_minus) / (2.0 * eps));
        }
        Ok(out)
    });

    let mut per_param: Vec<f64> = vec![0.0; bundle.slots.len()];
    let mut cursor = 0;
    for chunk in numeric {
        for n in chunk? {
            let (slot, j) = entries_idx[cursor];
            let a = bundle.slots[slot].as_ref().unwrap()[j];
            per_param[slot] = per_param[slot].max(rel_err(a, n));
            cursor += 1;
        }
    }

    let mut entries = Vec::new();
    let mut max_rel_err = 0.0f64;
    for (slot, grad) in bundle.slots.iter().enumerate() {
        if grad.is_some() {
            let name = params.get(super::params::ParamId(slot)).name.clone();
            entries.push((name, per_param[slot]));
            max_rel_err = max_rel_err.max(per_param[slot]);
        }
    }
    Ok(GradCheckReport { entries, max_rel_err })
}
