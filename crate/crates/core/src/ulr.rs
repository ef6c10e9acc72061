//! Universal lexical representation: bilinear similarity against a
//! universal token set, temperature-softmax token distributions,
//! mixture embeddings, and frequency-gated interpolation with
//! language-specific embeddings.

use std::collections::HashMap;
use std::sync::Arc;

use crate::corpus::vocab::{Vocabulary, UNK_ID};
use crate::embeddings::EmbeddingTable;
use crate::tensor::kernels::{matmul, softmax_temperature};
use crate::tensor::{ParamId, ParamSet, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct UlrConfig {
    /// Softmax temperature over universal-token scores.
    pub tau: f64,
    /// Interpolation keeps a direct embedding for ranks up to this.
    pub top_frequent_k: usize,
    /// Restrict each token's mixture to its top-n universal tokens;
    /// `None` means a full softmax over all of them.
    pub top_n_universal: Option<usize>,
}

impl Default for UlrConfig {
    fn default() -> Self {
        UlrConfig { tau: 0.05, top_frequent_k: 500, top_n_universal: None }
    }
}

/// The universal token space: M tokens with frozen key embeddings,
/// a trainable mixture embedding table, and the shared trainable
/// similarity transform (exactly identity before training).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct UniversalTokenSet {
    pub tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    /// Key dimension d.
    pub dim: usize,
    /// Mixture output dimension.
    pub d_model: usize,
    /// M×d frozen unit-row key matrix.
    pub e_k: Arc<Vec<f64>>,
    /// M×d_model trainable mixture embeddings.
    pub e_u: ParamId,
    /// d×d trainable similarity transform, shared across languages.
    pub a: ParamId,
}

impl UniversalTokenSet {
    /// Select `tokens` (already ordered, typically by target-side
    /// frequency) out of a normalized key table and register the
    /// trainable pieces.
    pub fn build(
        params: &mut ParamSet,
        keys: &EmbeddingTable,
        tokens: &[String],
        d_model: usize,
        init_scale: f64,
        rng: &mut crate::rng::Rng,
    ) -> Result<Self> {
        if !keys.normalized {
            return Err(Error::State("universal key table must be normalized".into()));
        }
        if tokens.is_empty() {
            return Err(Error::Input("universal token set is empty".into()));
        }
        let dim = keys.dim;
        let mut e_k = Vec::with_capacity(tokens.len() * dim);
        let mut index = HashMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            let row = keys.vector(tok).ok_or_else(|| {
                Error::Lookup(format!("universal token `{tok}` has no key vector"))
            })?;
            e_k.extend_from_slice(row);
            index.insert(tok.clone(), i);
        }
        let e_u =
            params.add_uniform("ulr.e_u", tokens.len(), d_model, -init_scale, init_scale, rng)?;
        let a = params.add_identity("ulr.a", dim)?;
        Ok(UniversalTokenSet {
            tokens: tokens.to_vec(),
            index,
            dim,
            d_model,
            e_k: Arc::new(e_k),
            e_u,
            a,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Rebuild the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }
}

/// A source language's frozen, projected query vectors, aligned to its
/// vocabulary, plus monolingual frequency ranks for the interpolation
/// gate. No gradient ever reaches these vectors.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct QuerySpace {
    pub lang: String,
    pub dim: usize,
    pub vocab: Vocabulary,
    /// V×d row-aligned to vocab ids; zero rows where no vector exists.
    pub vectors: Arc<Vec<f64>>,
    pub has_query: Vec<bool>,
    /// 1-based frequency rank per vocab id; `u32::MAX` when unknown.
    pub rank: Vec<u32>,
}

impl QuerySpace {
    /// Align a projected monolingual table and frequency ranks to a
    /// vocabulary. Tokens missing from the table fall back to a zero
    /// query vector, which makes their mixture distribution uniform.
    pub fn build(
        vocab: Vocabulary,
        projected: &EmbeddingTable,
        ranks: &HashMap<String, u32>,
    ) -> Self {
        let v = vocab.len();
        let dim = projected.dim;
        let mut vectors = vec![0.0; v * dim];
        let mut has_query = vec![false; v];
        let mut rank = vec![u32::MAX; v];
        for id in 0..v as u32 {
            let tok = vocab.token(id);
            if let Some(vec) = projected.vector(tok) {
                let is_zero = projected
                    .index_of(tok)
                    .map(|i| projected.zero_rows.contains(&i))
                    .unwrap_or(false);
                if !is_zero {
                    vectors[id as usize * dim..(id as usize + 1) * dim].copy_from_slice(vec);
                    has_query[id as usize] = true;
                }
            }
            if let Some(&r) = ranks.get(tok) {
                rank[id as usize] = r;
            }
        }
        // Reserved tokens count as maximally frequent so the UNK path
        // always keeps its direct embedding.
        for r in rank.iter_mut().take(4) {
            *r = 1;
        }
        QuerySpace {
            lang: projected.lang.clone(),
            dim,
            vocab,
            vectors: Arc::new(vectors),
            has_query,
            rank,
        }
    }

    pub fn row(&self, id: u32) -> &[f64] {
        &self.vectors[id as usize * self.dim..(id as usize + 1) * self.dim]
    }

    /// The interpolation gate: 1.0 for the top-k frequent tokens and
    /// the UNK path, 0.0 otherwise.
    pub fn alpha(&self, id: u32, cap: usize) -> f64 {
        if id == UNK_ID || self.rank[id as usize] as usize <= cap {
            1.0
        } else {
            0.0
        }
    }
}

/// Frequency-gated direct embeddings for one language.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct InterpolationRule {
    /// V_lang × d_model trainable table, optimized directly.
    pub e_i: ParamId,
    /// The rank cutoff for `alpha`.
    pub top_frequent_k: usize,
}

impl InterpolationRule {
    /// `beta` is fixed to 1.0: the mixture term always contributes.
    pub fn beta(&self) -> f64 {
        1.0
    }
}

/// 1-based frequency ranks from a monolingual corpus; ties broken by
/// token string so ranking is deterministic.
pub fn frequency_ranks(sentences: &[Vec<String>]) -> HashMap<String, u32> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sent in sentences {
        for tok in sent {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    let mut by_count: Vec<(&str, u64)> = counts.into_iter().collect();
    by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    by_count
        .into_iter()
        .enumerate()
        .map(|(i, (tok, _))| (tok.to_string(), (i + 1) as u32))
        .collect()
}

// ── Reference (non-tape) operations ─────────────────────────────────

/// Similarity scores of one token against every universal token:
/// `D(u_i, x) = E^K(u_i) · A · E^Q(x)ᵀ`. Tokens without a query vector
/// score zero everywhere (uniform fallback after the softmax).
pub fn similarity(
    uts: &UniversalTokenSet,
    qs: &QuerySpace,
    params: &ParamSet,
    token: &str,
) -> Result<Vec<f64>> {
    if qs.dim != uts.dim {
        return Err(Error::Config(format!(
            "query space dim {} does not match key dim {}",
            qs.dim, uts.dim
        )));
    }
    let (ar, ac) = params.shape(uts.a);
    if (ar, ac) != (uts.dim, uts.dim) {
        return Err(Error::Config(format!(
            "transform is {ar}x{ac}, tables have dim {}",
            uts.dim
        )));
    }
    let id = qs.vocab.id_or_unk(token);
    let q = qs.row(id);
    // A · qᵀ once (a d-vector), then one pass over the keys.
    let aq = matmul(params.data(uts.a), q, uts.dim, uts.dim, 1);
    Ok(uts.e_k.chunks(uts.dim).map(|key| crate::tensor::kernels::dot(key, &aq)).collect())
}

/// Temperature softmax over scores, optionally restricted to the top-n
/// scoring universal tokens (masked entries come out exactly 0).
pub fn token_distribution(scores: &[f64], config: &UlrConfig) -> Result<Vec<f64>> {
    match config.top_n_universal {
        None => softmax_temperature(scores, config.tau),
        Some(n) if n >= scores.len() => softmax_temperature(scores, config.tau),
        Some(n) => {
            let keep = top_n_indices(scores, n);
            let kept: Vec<f64> = keep.iter().map(|&i| scores[i]).collect();
            let probs = softmax_temperature(&kept, config.tau)?;
            let mut out = vec![0.0; scores.len()];
            for (slot, p) in keep.iter().zip(probs) {
                out[*slot] = p;
            }
            Ok(out)
        }
    }
}

fn top_n_indices(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    order.truncate(n);
    order
}

/// Mixture embedding `e_x = Σ_i E^U(u_i) · q(u_i|x)`.
pub fn universal_embedding(
    uts: &UniversalTokenSet,
    params: &ParamSet,
    q: &[f64],
) -> Result<Vec<f64>> {
    if q.len() != uts.len() {
        return Err(Error::Shape(format!(
            "distribution has {} entries for {} universal tokens",
            q.len(),
            uts.len()
        )));
    }
    Ok(matmul(q, params.data(uts.e_u), 1, uts.len(), uts.d_model))
}

/// `alpha(x)·E^I(x) + beta(x)·Σ E^U(u_i)·q(u_i|x)` for one token.
/// Unknown tokens take the UNK row of E^I plus the uniform-fallback
/// mixture, so the result is always finite.
pub fn interpolated_embedding(
    uts: &UniversalTokenSet,
    qs: &QuerySpace,
    rule: &InterpolationRule,
    config: &UlrConfig,
    params: &ParamSet,
    token: &str,
) -> Result<Vec<f64>> {
    let scores = similarity(uts, qs, params, token)?;
    let q = token_distribution(&scores, config)?;
    let mut out = universal_embedding(uts, params, &q)?;
    let id = qs.vocab.id_or_unk(token);
    let alpha = qs.alpha(id, rule.top_frequent_k);
    if alpha != 0.0 {
        let e_i = params.data(rule.e_i);
        let row = &e_i[id as usize * uts.d_model..(id as usize + 1) * uts.d_model];
        for (o, &r) in out.iter_mut().zip(row) {
            *o += alpha * rule.beta() * r;
        }
    }
    Ok(out)
}

// ── Tape integration ────────────────────────────────────────────────

/// Per-tape cache of the shared pieces: `B = E^K · A` is built once per
/// tape and reused by every sentence in the chunk.
pub struct UlrTapeContext {
    b: Var,
    e_u: Var,
}

impl UlrTapeContext {
    pub fn new(tape: &mut Tape, params: &ParamSet, uts: &UniversalTokenSet) -> Result<Self> {
        let e_k = tape.constant_shared(uts.len(), uts.dim, Arc::clone(&uts.e_k));
        let a = tape.param(params, uts.a);
        let b = tape.matmul(e_k, a)?;
        let e_u = tape.param(params, uts.e_u);
        Ok(UlrTapeContext { b, e_u })
    }

    /// Interpolated source embeddings for one sentence: a T×d_model var.
    /// Gradients flow into A, E^U and (for alpha-gated rows) E^I only.
    pub fn embed_rows(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        qs: &QuerySpace,
        rule: &InterpolationRule,
        config: &UlrConfig,
        ids: &[u32],
    ) -> Result<Var> {
        let t_len = ids.len();
        let d = qs.dim;
        let mut qdata = Vec::with_capacity(t_len * d);
        for &id in ids {
            qdata.extend_from_slice(qs.row(id));
        }
        let q_rows = tape.constant(t_len, d, qdata);
        let scores = tape.matmul_nt(q_rows, self.b)?;
        let mask = config.top_n_universal.filter(|&n| n < tape.shape(scores).1).map(|n| {
            let (rows, cols) = tape.shape(scores);
            let values = tape.value(scores);
            let mut mask = vec![false; rows * cols];
            for r in 0..rows {
                for i in top_n_indices(&values[r * cols..(r + 1) * cols], n) {
                    mask[r * cols + i] = true;
                }
            }
            mask
        });
        let q = tape.softmax_rows(scores, config.tau, mask)?;
        let mix = tape.matmul(q, self.e_u)?;

        let e_i = tape.param(params, rule.e_i);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let gathered = tape.gather_rows(e_i, &idx)?;
        let alpha: Vec<f64> = ids.iter().map(|&id| qs.alpha(id, rule.top_frequent_k)).collect();
        let alpha_col = tape.constant(t_len, 1, alpha);
        let direct = tape.mul_col(gathered, alpha_col)?;
        tape.add(direct, mix)
    }
}
