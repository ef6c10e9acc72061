//! Mixture of language experts over the encoder's final states:
//! per-position expert mixtures, the supervised gate objective, and the
//! low-resource freeze rule.

use crate::rng::Rng;
use crate::tensor::{ParamId, ParamSet, Tape, Var};
use crate::{Error, Result};

/// Two-layer feed-forward expert reading encoder states
/// (d_enc → d_exp → d_enc, tanh in between).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExpertNetwork {
    pub lang: String,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// One affine layer d_enc → K scoring the experts.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GateNetwork {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MoleLayer {
    pub experts: Vec<ExpertNetwork>,
    pub gate: GateNetwork,
    /// Weight of the gate objective in the total loss.
    pub lambda_gate: f64,
    pub d_enc: usize,
    pub d_exp: usize,
}

/// Everything one forward pass produces.
pub struct MoleForward {
    /// T×d_enc states that replace the encoder output.
    pub h_prime: Var,
    /// T×K row-stochastic gate weights.
    pub gate_probs: Var,
    /// T×K raw gate scores (the loss works on these for stability).
    pub gate_logits: Var,
}

impl MoleLayer {
    /// One expert per auxiliary language, in the given order.
    pub fn build(
        params: &mut ParamSet,
        aux_langs: &[String],
        d_enc: usize,
        d_exp: usize,
        lambda_gate: f64,
        init_scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if aux_langs.is_empty() {
            return Err(Error::Config("mixture of experts needs at least one expert".into()));
        }
        let mut experts = Vec::with_capacity(aux_langs.len());
        for lang in aux_langs {
            experts.push(ExpertNetwork {
                lang: lang.clone(),
                w1: params.add_uniform(
                    &format!("mole.expert.{lang}.w1"),
                    d_enc,
                    d_exp,
                    -init_scale,
                    init_scale,
                    rng,
                )?,
                b1: params.add_zeros(&format!("mole.expert.{lang}.b1"), 1, d_exp)?,
                w2: params.add_uniform(
                    &format!("mole.expert.{lang}.w2"),
                    d_exp,
                    d_enc,
                    -init_scale,
                    init_scale,
                    rng,
                )?,
                b2: params.add_zeros(&format!("mole.expert.{lang}.b2"), 1, d_enc)?,
            });
        }
        let gate = GateNetwork {
            w: params.add_uniform(
                "mole.gate.w",
                d_enc,
                aux_langs.len(),
                -init_scale,
                init_scale,
                rng,
            )?,
            b: params.add_zeros("mole.gate.b", 1, aux_langs.len())?,
        };
        Ok(MoleLayer { experts, gate, lambda_gate, d_enc, d_exp })
    }

    pub fn expert_count(&self) -> usize {
        self.experts.len()
    }

    pub fn expert_index(&self, lang: &str) -> Option<usize> {
        self.experts.iter().position(|e| e.lang == lang)
    }

    /// Every parameter belonging to this layer, experts then gate.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for e in &self.experts {
            ids.extend([e.w1, e.b1, e.w2, e.b2]);
        }
        ids.extend([self.gate.w, self.gate.b]);
        ids
    }

    /// `h'_t = Σ_k f_k(h_t) · softmax(g(h_t))_k`; h' replaces the
    /// encoder output that attention reads.
    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, h: Var) -> Result<MoleForward> {
        let (_, d) = tape.shape(h);
        if d != self.d_enc {
            return Err(Error::Config(format!(
                "encoder states have dim {d}, experts expect {}",
                self.d_enc
            )));
        }
        let gw = tape.param(params, self.gate.w);
        let gb = tape.param(params, self.gate.b);
        let gate_logits = tape.affine(h, gw, gb)?;
        let gate_probs = tape.softmax_rows(gate_logits, 1.0, None)?;

        let mut h_prime: Option<Var> = None;
        for (k, expert) in self.experts.iter().enumerate() {
            let w1 = tape.param(params, expert.w1);
            let b1 = tape.param(params, expert.b1);
            let w2 = tape.param(params, expert.w2);
            let b2 = tape.param(params, expert.b2);
            let hidden = tape.affine(h, w1, b1)?;
            let hidden = tape.tanh(hidden);
            let f_k = tape.affine(hidden, w2, b2)?;
            let weight = tape.slice_cols(gate_probs, k, 1)?;
            let weighted = tape.mul_col(f_k, weight)?;
            h_prime = Some(match h_prime {
                None => weighted,
                Some(acc) => tape.add(acc, weighted)?,
            });
        }
        Ok(MoleForward { h_prime: h_prime.unwrap(), gate_probs, gate_logits })
    }
}

/// Gate objective on the tape: mean over positions of
/// `-log softmax(g(h_t))_k` for the batch's auxiliary language k.
pub fn gate_loss_tape(tape: &mut Tape, gate_logits: Var, expert_index: usize) -> Result<Var> {
    let (t_len, k_total) = tape.shape(gate_logits);
    if expert_index >= k_total {
        return Err(Error::Param(format!(
            "expert index {expert_index} out of {k_total} experts"
        )));
    }
    let logp = tape.log_softmax_rows(gate_logits);
    let nll = tape.nll_pick_sum(logp, &vec![expert_index; t_len])?;
    Ok(tape.scale(nll, 1.0 / t_len as f64))
}

/// Reference gate loss on a T×K row-stochastic matrix.
pub fn gate_loss(gate_probs: &[f64], k_total: usize, expert_index: usize) -> Result<f64> {
    if expert_index >= k_total {
        return Err(Error::Param(format!(
            "expert index {expert_index} out of {k_total} experts"
        )));
    }
    let t_len = gate_probs.len() / k_total;
    let sum: f64 =
        (0..t_len).map(|t| -gate_probs[t * k_total + expert_index].ln()).sum();
    Ok(sum / t_len as f64)
}

/// The low-resource freeze rule as an optimizer skip mask: for batches
/// from the low-resource set every MoLE parameter is exempted from the
/// update (a true no-op — values, moments and step scaling untouched),
/// while gradients still flow through the layer to the encoder.
pub fn apply_freeze_rule(
    n_params: usize,
    layer: &MoleLayer,
    batch_lang: &str,
    low_resource: &[String],
) -> Vec<bool> {
    let mut skip = vec![false; n_params];
    if low_resource.iter().any(|l| l == batch_lang) {
        for id in layer.param_ids() {
            skip[id.index()] = true;
        }
    }
    skip
}
