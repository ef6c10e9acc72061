//! Model structure and the tape-level forward pass: source embedding
//! providers, the bidirectional recurrent encoder, content-based
//! attention, and the two-layer decoder with input feeding.

use crate::corpus::vocab::{mark_token, Vocabulary, BOS_ID, EOS_ID};
use crate::corpus::BatchIndexer;
use crate::mole::MoleLayer;
use crate::rng::Rng;
use crate::tensor::{ParamId, ParamSet, Tape, Var};
use crate::ulr::{InterpolationRule, QuerySpace, UlrConfig, UlrTapeContext, UniversalTokenSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AttentionKind {
    /// Single-layer additive (concat) scoring.
    Additive,
    /// Bilinear scoring `d·W·hᵀ`.
    Bilinear,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Per-direction encoder hidden size (decoder layers use the same).
    pub hidden: usize,
    /// Source/target embedding width; also the ULR mixture width.
    pub embed_dim: usize,
    pub attention: AttentionKind,
    /// Uniform init half-width for recurrent/affine weights.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 64,
            embed_dim: 64,
            attention: AttentionKind::Additive,
            init_scale: 0.08,
        }
    }
}

/// Which source embedding path the model uses.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum SourceProvider {
    /// Ordinary lookup over a language-marked union vocabulary.
    Baseline { vocab: Vocabulary, table: ParamId, delim: char },
    /// Universal mixtures with per-language interpolation.
    Ulr { uts: UniversalTokenSet, langs: Vec<(String, UlrLang)>, config: UlrConfig },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct UlrLang {
    pub query_space: QuerySpace,
    pub rule: InterpolationRule,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LstmParams {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub enum AttnParams {
    Additive { wa: ParamId, ua: ParamId, v: ParamId },
    Bilinear { wb: ParamId },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TranslationModel {
    pub config: ModelConfig,
    pub source: SourceProvider,
    pub mole: Option<MoleLayer>,
    pub target_vocab: Vocabulary,
    pub tgt_embed: ParamId,
    pub enc_fwd: LstmParams,
    pub enc_bwd: LstmParams,
    pub dec1: LstmParams,
    pub dec2: LstmParams,
    pub attn: AttnParams,
    pub dec_init1: (ParamId, ParamId),
    pub dec_init2: (ParamId, ParamId),
    pub readout_w: ParamId,
    pub readout_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    /// Source languages the model was built for.
    pub langs: Vec<String>,
    pub low_resource: Vec<String>,
    pub steps_trained: u64,
    pub seed: u64,
    /// Paths of the subword models this model's data was segmented
    /// with, carried for provenance in checkpoints.
    pub bpe_refs: Vec<(String, String)>,
}

fn lstm_params(
    params: &mut ParamSet,
    name: &str,
    in_dim: usize,
    hidden: usize,
    scale: f64,
    rng: &mut Rng,
) -> Result<LstmParams> {
    // Forget-gate bias starts at 1.0 so early cell state survives long
    // enough for credit to flow through the recurrence.
    let mut bias = vec![0.0; 4 * hidden];
    bias[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
    Ok(LstmParams {
        wx: params.add_uniform(&format!("{name}.wx"), in_dim, 4 * hidden, -scale, scale, rng)?,
        wh: params.add_uniform(&format!("{name}.wh"), hidden, 4 * hidden, -scale, scale, rng)?,
        b: params.add(&format!("{name}.b"), 1, 4 * hidden, bias)?,
    })
}

impl TranslationModel {
    /// Register all encoder/decoder/output parameters. The source
    /// provider (and optional MoLE layer) must already be built against
    /// the same `ParamSet`.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        params: &mut ParamSet,
        config: ModelConfig,
        source: SourceProvider,
        mole: Option<MoleLayer>,
        target_vocab: Vocabulary,
        langs: Vec<String>,
        low_resource: Vec<String>,
        seed: u64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let h = config.hidden;
        let e = config.embed_dim;
        let s = config.init_scale;
        if let Some(m) = &mole {
            if m.d_enc != 2 * h {
                return Err(Error::Config(format!(
                    "expert dim {} does not match encoder output dim {}",
                    m.d_enc,
                    2 * h
                )));
            }
        }
        let tgt_embed =
            params.add_uniform("tgt.embed", target_vocab.len(), e, -s, s, rng)?;
        let enc_fwd = lstm_params(params, "enc.fwd", e, h, s, rng)?;
        let enc_bwd = lstm_params(params, "enc.bwd", e, h, s, rng)?;
        // Input feeding: layer-1 reads the target embedding plus the
        // previous context vector.
        let dec1 = lstm_params(params, "dec.l1", e + 2 * h, h, s, rng)?;
        let dec2 = lstm_params(params, "dec.l2", h + 2 * h, h, s, rng)?;
        let attn = match config.attention {
            AttentionKind::Additive => AttnParams::Additive {
                wa: params.add_uniform("attn.wa", 2 * h, h, -s, s, rng)?,
                ua: params.add_uniform("attn.ua", h, h, -s, s, rng)?,
                v: params.add_uniform("attn.v", h, 1, -s, s, rng)?,
            },
            AttentionKind::Bilinear => AttnParams::Bilinear {
                wb: params.add_uniform("attn.wb", h, 2 * h, -s, s, rng)?,
            },
        };
        let dec_init1 = (
            params.add_uniform("dec.init1.w", h, h, -s, s, rng)?,
            params.add_zeros("dec.init1.b", 1, h)?,
        );
        let dec_init2 = (
            params.add_uniform("dec.init2.w", h, h, -s, s, rng)?,
            params.add_zeros("dec.init2.b", 1, h)?,
        );
        let readout_w = params.add_uniform("out.readout.w", h + 2 * h, e, -s, s, rng)?;
        let readout_b = params.add_zeros("out.readout.b", 1, e)?;
        let out_w = params.add_uniform("out.proj.w", e, target_vocab.len(), -s, s, rng)?;
        let out_b = params.add_zeros("out.proj.b", 1, target_vocab.len())?;
        Ok(TranslationModel {
            config,
            source,
            mole,
            target_vocab,
            tgt_embed,
            enc_fwd,
            enc_bwd,
            dec1,
            dec2,
            attn,
            dec_init1,
            dec_init2,
            readout_w,
            readout_b,
            out_w,
            out_b,
            langs,
            low_resource,
            steps_trained: 0,
            seed,
            bpe_refs: Vec::new(),
        })
    }

    /// The ULR query space for a language, when on the ULR path.
    pub fn ulr_lang(&self, lang: &str) -> Option<&UlrLang> {
        match &self.source {
            SourceProvider::Ulr { langs, .. } => {
                langs.iter().find(|(l, _)| l == lang).map(|(_, u)| u)
            }
            SourceProvider::Baseline { .. } => None,
        }
    }

    /// Rebuild skipped lookup tables after deserialization.
    pub fn after_load(&mut self) {
        self.target_vocab.rebuild_index();
        match &mut self.source {
            SourceProvider::Baseline { vocab, .. } => vocab.rebuild_index(),
            SourceProvider::Ulr { uts, langs, .. } => {
                uts.rebuild_index();
                for (_, ul) in langs {
                    ul.query_space.vocab.rebuild_index();
                }
            }
        }
    }
}

impl BatchIndexer for TranslationModel {
    fn source_id(&self, lang: &str, token: &str) -> u32 {
        match &self.source {
            SourceProvider::Baseline { vocab, delim, .. } => {
                vocab.id_or_unk(&mark_token(token, lang, *delim))
            }
            SourceProvider::Ulr { langs, .. } => langs
                .iter()
                .find(|(l, _)| l == lang)
                .map(|(_, u)| u.query_space.vocab.id_or_unk(token))
                .unwrap_or(crate::corpus::vocab::UNK_ID),
        }
    }

    fn target_id(&self, token: &str) -> u32 {
        self.target_vocab.id_or_unk(token)
    }
}

/// Per-tape forward context: ULR's shared pieces are built once per
/// tape, then reused by every sentence of the chunk.
pub struct ForwardCtx {
    ulr: Option<UlrTapeContext>,
}

/// Optional training-time stochasticity: dropout rate plus the chunk's
/// seeded generator.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut Rng,
}

pub struct EncodeOut {
    /// T×2h states the decoder attends over (after MoLE, when present).
    pub states: Var,
    /// Backward-direction state at the first token; seeds the decoder.
    pub bwd_final: Var,
    /// T×K raw gate scores when MoLE is active.
    pub gate_logits: Option<Var>,
    /// T×K gate probabilities when MoLE is active.
    pub gate_probs: Option<Var>,
}

impl TranslationModel {
    pub fn forward_ctx(&self, tape: &mut Tape, params: &ParamSet) -> Result<ForwardCtx> {
        let ulr = match &self.source {
            SourceProvider::Ulr { uts, .. } => Some(UlrTapeContext::new(tape, params, uts)?),
            SourceProvider::Baseline { .. } => None,
        };
        Ok(ForwardCtx { ulr })
    }

    fn embed_source(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        ctx: &ForwardCtx,
        lang: &str,
        ids: &[u32],
    ) -> Result<Var> {
        match &self.source {
            SourceProvider::Baseline { table, .. } => {
                let t = tape.param(params, *table);
                let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
                tape.gather_rows(t, &idx)
            }
            SourceProvider::Ulr { langs, config, .. } => {
                let (_, ul) = langs
                    .iter()
                    .find(|(l, _)| l == lang)
                    .ok_or_else(|| Error::Lookup(format!("no query space for language `{lang}`")))?;
                let ulr_ctx = ctx.ulr.as_ref().expect("ULR context built for ULR provider");
                ulr_ctx.embed_rows(tape, params, &ul.query_space, &ul.rule, config, ids)
            }
        }
    }

    fn lstm_chain(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        cell: &LstmParams,
        inputs: &[Var],
        h0: Var,
        c0: Var,
    ) -> Result<Vec<Var>> {
        let mut h = h0;
        let mut c = c0;
        let mut states = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (nh, nc) = self.lstm_step(tape, params, cell, x, h, c)?;
            h = nh;
            c = nc;
            states.push(h);
        }
        Ok(states)
    }

    /// Encode one sentence: per-token embeddings from the configured
    /// provider, the bidirectional recurrence, then MoLE when enabled.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        ctx: &ForwardCtx,
        lang: &str,
        ids: &[u32],
        dropout: Option<&mut DropoutCtx>,
    ) -> Result<EncodeOut> {
        if ids.is_empty() {
            return Err(Error::Input("cannot encode an empty sentence".into()));
        }
        let h = self.config.hidden;
        let t_len = ids.len();
        let embeds = self.embed_source(tape, params, ctx, lang, ids)?;
        let rows: Vec<Var> =
            (0..t_len).map(|t| tape.slice_rows(embeds, t, 1)).collect::<Result<_>>()?;

        let zero = tape.constant(1, h, vec![0.0; h]);
        let fwd = self.lstm_chain(tape, params, &self.enc_fwd, &rows, zero, zero)?;
        let rev_rows: Vec<Var> = rows.iter().rev().copied().collect();
        let bwd_rev = self.lstm_chain(tape, params, &self.enc_bwd, &rev_rows, zero, zero)?;
        let bwd_final = *bwd_rev.last().expect("non-empty sentence");

        let mut concat = Vec::with_capacity(t_len);
        for t in 0..t_len {
            concat.push(tape.concat_cols(fwd[t], bwd_rev[t_len - 1 - t])?);
        }
        let mut states = tape.stack_rows(&concat)?;
        if let Some(d) = dropout {
            states = tape.dropout(states, d.rate, d.rng)?;
        }

        let (mut gate_logits, mut gate_probs) = (None, None);
        if let Some(mole) = &self.mole {
            let out = mole.forward(tape, params, states)?;
            states = out.h_prime;
            gate_logits = Some(out.gate_logits);
            gate_probs = Some(out.gate_probs);
        }
        Ok(EncodeOut { states, bwd_final, gate_logits, gate_probs })
    }

    /// Precompute what attention needs once per sentence.
    pub(crate) fn attn_precompute(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        states: Var,
    ) -> Result<Var> {
        match self.attn {
            AttnParams::Additive { wa, .. } => {
                let wa = tape.param(params, wa);
                tape.matmul(states, wa)
            }
            AttnParams::Bilinear { .. } => Ok(states),
        }
    }

    /// One attention read: weights (1×Ts) and context (1×2h).
    pub(crate) fn attend(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        states: Var,
        precomputed: Var,
        query: Var,
    ) -> Result<(Var, Var)> {
        let scores = match self.attn {
            AttnParams::Additive { ua, v, .. } => {
                let ua = tape.param(params, ua);
                let v = tape.param(params, v);
                let q = tape.matmul(query, ua)?;
                let sum = tape.add_row(precomputed, q)?;
                let act = tape.tanh(sum);
                let col = tape.matmul(act, v)?;
                tape.transpose(col)
            }
            AttnParams::Bilinear { wb } => {
                let wb = tape.param(params, wb);
                let q = tape.matmul(query, wb)?;
                tape.matmul_nt(q, states)?
            }
        };
        let weights = tape.softmax_rows(scores, 1.0, None)?;
        let context = tape.matmul(weights, states)?;
        Ok((weights, context))
    }

    pub(crate) fn decoder_init(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        bwd_final: Var,
    ) -> Result<(Var, Var)> {
        let (w1, b1) = self.dec_init1;
        let (w2, b2) = self.dec_init2;
        let w1 = tape.param(params, w1);
        let b1 = tape.param(params, b1);
        let w2 = tape.param(params, w2);
        let b2 = tape.param(params, b2);
        let h1 = tape.affine(bwd_final, w1, b1)?;
        let h1 = tape.tanh(h1);
        let h2 = tape.affine(bwd_final, w2, b2)?;
        let h2 = tape.tanh(h2);
        Ok((h1, h2))
    }

    /// One decoder step with input feeding. Returns the new state and
    /// the 1×V logits row.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn decode_step(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        states: Var,
        precomputed: Var,
        dec: &mut DecoderState,
        y_embed: Var,
        dropout: Option<&mut DropoutCtx>,
    ) -> Result<(Var, Var)> {
        let x1 = tape.concat_cols(y_embed, dec.context)?;
        let s1 = self.lstm_step(tape, params, &self.dec1, x1, dec.h1, dec.c1)?;
        dec.h1 = s1.0;
        dec.c1 = s1.1;
        let (weights, context) = self.attend(tape, params, states, precomputed, dec.h1)?;
        dec.context = context;
        let x2 = tape.concat_cols(dec.h1, context)?;
        let s2 = self.lstm_step(tape, params, &self.dec2, x2, dec.h2, dec.c2)?;
        dec.h2 = s2.0;
        dec.c2 = s2.1;
        let cat = tape.concat_cols(dec.h2, context)?;
        let rw = tape.param(params, self.readout_w);
        let rb = tape.param(params, self.readout_b);
        let readout = tape.affine(cat, rw, rb)?;
        let mut readout = tape.tanh(readout);
        if let Some(d) = dropout {
            readout = tape.dropout(readout, d.rate, d.rng)?;
        }
        let ow = tape.param(params, self.out_w);
        let ob = tape.param(params, self.out_b);
        let logits = tape.affine(readout, ow, ob)?;
        Ok((weights, logits))
    }

    /// One LSTM cell step (gate order i, f, g, o).
    fn lstm_step(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        cell: &LstmParams,
        x: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var)> {
        let hidden = params.get(cell.wh).rows;
        let wx = tape.param(params, cell.wx);
        let wh = tape.param(params, cell.wh);
        let b = tape.param(params, cell.b);
        let xg = tape.matmul(x, wx)?;
        let hg = tape.matmul(h_prev, wh)?;
        let sum = tape.add(xg, hg)?;
        let gates = tape.add_row(sum, b)?;
        let i = tape.slice_cols(gates, 0, hidden)?;
        let f = tape.slice_cols(gates, hidden, hidden)?;
        let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
        let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul_elem(f, c_prev)?;
        let ig = tape.mul_elem(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul_elem(o, tc)?;
        Ok((h, c))
    }

    /// Full per-sentence loss graph: encoder, decoder over
    /// `[BOS] y… → y… [EOS]`, negative log-likelihood SUM (the caller
    /// scales by the batch token count), plus the gate-loss SUM when a
    /// MoLE gate is supervised for this language.
    #[allow(clippy::too_many_arguments)]
    pub fn sentence_loss(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        ctx: &ForwardCtx,
        lang: &str,
        src_ids: &[u32],
        tgt_ids: &[u32],
        mut dropout: Option<&mut DropoutCtx>,
    ) -> Result<SentenceLoss> {
        let enc = self.encode(tape, params, ctx, lang, src_ids, dropout.as_deref_mut())?;
        let precomputed = self.attn_precompute(tape, params, enc.states)?;
        let (h1, h2) = self.decoder_init(tape, params, enc.bwd_final)?;
        let h = self.config.hidden;
        let zero_h = tape.constant(1, h, vec![0.0; h]);
        let zero_ctx = tape.constant(1, 2 * h, vec![0.0; 2 * h]);
        let mut dec = DecoderState { h1, c1: zero_h, h2, c2: zero_h, context: zero_ctx };

        let mut input_ids: Vec<usize> = Vec::with_capacity(tgt_ids.len() + 1);
        input_ids.push(BOS_ID as usize);
        input_ids.extend(tgt_ids.iter().map(|&i| i as usize));
        let mut output_ids: Vec<usize> = tgt_ids.iter().map(|&i| i as usize).collect();
        output_ids.push(EOS_ID as usize);

        let embed_table = tape.param(params, self.tgt_embed);
        let y_embeds = tape.gather_rows(embed_table, &input_ids)?;

        let mut logit_rows = Vec::with_capacity(input_ids.len());
        for t in 0..input_ids.len() {
            let y = tape.slice_rows(y_embeds, t, 1)?;
            let (_, logits) = self.decode_step(
                tape,
                params,
                enc.states,
                precomputed,
                &mut dec,
                y,
                dropout.as_deref_mut(),
            )?;
            logit_rows.push(logits);
        }
        let logits = tape.stack_rows(&logit_rows)?;
        let logp = tape.log_softmax_rows(logits);
        let nll_sum = tape.nll_pick_sum(logp, &output_ids)?;

        let gate_sum = match (&self.mole, enc.gate_logits) {
            (Some(mole), Some(gl)) => match mole.expert_index(lang) {
                Some(k) => {
                    let (t_len, _) = tape.shape(gl);
                    let lp = tape.log_softmax_rows(gl);
                    Some((tape.nll_pick_sum(lp, &vec![k; t_len])?, t_len))
                }
                None => None,
            },
            _ => None,
        };

        Ok(SentenceLoss {
            nll_sum,
            n_target_tokens: output_ids.len(),
            gate_sum,
            gate_probs: enc.gate_probs,
        })
    }
}

#[derive(Clone, Copy)]
pub struct DecoderState {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
    pub context: Var,
}

pub struct SentenceLoss {
    pub nll_sum: Var,
    pub n_target_tokens: usize,
    /// Gate NLL sum and the number of source positions it covers.
    pub gate_sum: Option<(Var, usize)>,
    pub gate_probs: Option<Var>,
}

/// Plain-value encoder states for inspection and tests.
pub fn encode_states(
    model: &TranslationModel,
    params: &ParamSet,
    lang: &str,
    ids: &[u32],
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let ctx = model.forward_ctx(&mut tape, params)?;
    let out = model.encode(&mut tape, params, &ctx, lang, ids, None)?;
    let (t_len, width) = tape.shape(out.states);
    let values = tape.value(out.states);
    Ok((0..t_len).map(|t| values[t * width..(t + 1) * width].to_vec()).collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::tokenize;

    /// Tiny baseline-path model over a fixed vocabulary.
    pub(crate) fn baseline_fixture(
        hidden: usize,
        embed: usize,
    ) -> (ParamSet, TranslationModel) {
        let mut params = ParamSet::new();
        let mut rng = Rng::seed_from(17);
        let sentences = vec![tokenize("a b c d e f g")];
        let corpora = vec![("xx".to_string(), sentences)];
        let vocab = crate::corpus::build_multilingual_vocab(&corpora, '|').unwrap();
        let table = params
            .add_uniform("src.embed", vocab.len(), embed, -0.08, 0.08, &mut rng)
            .unwrap();
        let mut tgt_vocab = Vocabulary::new();
        for t in ["x", "y", "z"] {
            tgt_vocab.add(t);
        }
        let source = SourceProvider::Baseline { vocab, table, delim: '|' };
        let config = ModelConfig { hidden, embed_dim: embed, ..ModelConfig::default() };
        let model = TranslationModel::build(
            &mut params,
            config,
            source,
            None,
            tgt_vocab,
            vec!["xx".into()],
            vec![],
            17,
            &mut rng,
        )
        .unwrap();
        (params, model)
    }

    #[test]
    fn encoder_output_shape_is_t_by_twice_hidden() {
        let (params, model) = baseline_fixture(5, 4);
        let ids: Vec<u32> = (0..6).map(|i| model.source_id("xx", &["a", "b", "c", "d", "e", "f"][i])).collect();
        let states = encode_states(&model, &params, "xx", &ids).unwrap();
        assert_eq!(states.len(), 6);
        assert!(states.iter().all(|row| row.len() == 10));
    }

    #[test]
    fn encoding_is_deterministic_without_dropout() {
        let (params, model) = baseline_fixture(4, 4);
        let ids = vec![model.source_id("xx", "a"), model.source_id("xx", "b")];
        let a = encode_states(&model, &params, "xx", &ids).unwrap();
        let b = encode_states(&model, &params, "xx", &ids).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_token_sentence_has_finite_states() {
        let (params, model) = baseline_fixture(4, 4);
        let ids = vec![model.source_id("xx", "c")];
        let states = encode_states(&model, &params, "xx", &ids).unwrap();
        assert_eq!(states.len(), 1);
        assert!(states[0].iter().all(|x| x.is_finite()));
        // Both directions contribute: the row is not all zeros in
        // either half.
        assert!(states[0][..4].iter().any(|&x| x != 0.0));
        assert!(states[0][4..].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn empty_sentence_is_rejected() {
        let (params, model) = baseline_fixture(3, 3);
        let mut tape = Tape::new();
        let ctx = model.forward_ctx(&mut tape, &params).unwrap();
        assert!(model.encode(&mut tape, &params, &ctx, "xx", &[], None).is_err());
    }

    #[test]
    fn out_of_range_source_id_is_an_error() {
        let (params, model) = baseline_fixture(3, 3);
        let mut tape = Tape::new();
        let ctx = model.forward_ctx(&mut tape, &params).unwrap();
        match model.encode(&mut tape, &params, &ctx, "xx", &[9999], None) {
            Err(Error::Lookup(_)) => {}
            Err(other) => panic!("expected lookup error, got {other}"),
            Ok(_) => panic!("expected lookup error"),
        }
    }

    #[test]
    fn attention_weights_form_probability_rows() {
        let (params, model) = baseline_fixture(4, 4);
        let ids: Vec<u32> =
            ["a", "b", "c", "d"].iter().map(|t| model.source_id("xx", t)).collect();
        let mut tape = Tape::new();
        let ctx = model.forward_ctx(&mut tape, &params).unwrap();
        let enc = model.encode(&mut tape, &params, &ctx, "xx", &ids, None).unwrap();
        let pre = model.attn_precompute(&mut tape, &params, enc.states).unwrap();
        let (h1, h2) = model.decoder_init(&mut tape, &params, enc.bwd_final).unwrap();
        let zero_h = tape.constant(1, 4, vec![0.0; 4]);
        let zero_ctx = tape.constant(1, 8, vec![0.0; 8]);
        let mut dec = DecoderState { h1, c1: zero_h, h2, c2: zero_h, context: zero_ctx };
        let y = tape.constant(1, 4, vec![0.1, -0.2, 0.3, 0.0]);
        let (weights, logits) = model
            .decode_step(&mut tape, &params, enc.states, pre, &mut dec, y, None)
            .unwrap();
        let w = tape.value(weights);
        assert_eq!(w.len(), 4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(tape.shape(logits).1, model.target_vocab.len());
    }

    #[test]
    fn sentence_loss_counts_eos_in_targets() {
        let (params, model) = baseline_fixture(4, 4);
        let src = vec![model.source_id("xx", "a"), model.source_id("xx", "b")];
        let tgt = vec![model.target_id("x"), model.target_id("y")];
        let mut tape = Tape::new();
        let ctx = model.forward_ctx(&mut tape, &params).unwrap();
        let out =
            model.sentence_loss(&mut tape, &params, &ctx, "xx", &src, &tgt, None).unwrap();
        assert_eq!(out.n_target_tokens, 3);
        assert!(tape.scalar(out.nll_sum).is_finite());
    }
}
