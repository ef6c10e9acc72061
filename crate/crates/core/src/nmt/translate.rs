//! Greedy and beam decoding with attention extraction.

use crate::corpus::vocab::{BOS_ID, EOS_ID};
use crate::corpus::BatchIndexer;
use crate::tensor::{ParamSet, Tape};
use crate::{Error, Result};

use super::model::{DecoderState, TranslationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone)]
pub struct Translation {
    pub tokens: Vec<String>,
    /// One row per emitted token; each row sums to 1 over source
    /// positions.
    pub attention: Vec<Vec<f64>>,
}

/// First index of the maximum (deterministic tie-break).
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Translate one tokenized source sentence.
pub fn translate(
    model: &TranslationModel,
    params: &ParamSet,
    lang: &str,
    tokens: &[String],
    mode: DecodeMode,
    max_len: usize,
) -> Result<Translation> {
    if tokens.is_empty() {
        return Err(Error::Input("cannot translate an empty sentence".into()));
    }
    let ids: Vec<u32> = tokens.iter().map(|t| model.source_id(lang, t)).collect();
    match mode {
        DecodeMode::Greedy => decode_greedy(model, params, lang, &ids, max_len),
        DecodeMode::Beam(width) => {
            if width == 0 {
                return Err(Error::Param("beam width must be >= 1".into()));
            }
            decode_beam(model, params, lang, &ids, width, max_len)
        }
    }
}

fn decode_greedy(
    model: &TranslationModel,
    params: &ParamSet,
    lang: &str,
    ids: &[u32],
    max_len: usize,
) -> Result<Translation> {
    let mut tape = Tape::new();
    let ctx = model.forward_ctx(&mut tape, params)?;
    let enc = model.encode(&mut tape, params, &ctx, lang, ids, None)?;
    let pre = model.attn_precompute(&mut tape, params, enc.states)?;
    let (h1, h2) = model.decoder_init(&mut tape, params, enc.bwd_final)?;
    let h = model.config.hidden;
    let zero_h = tape.constant(1, h, vec![0.0; h]);
    let zero_ctx = tape.constant(1, 2 * h, vec![0.0; 2 * h]);
    let mut dec = DecoderState { h1, c1: zero_h, h2, c2: zero_h, context: zero_ctx };
    let embed = tape.param(params, model.tgt_embed);

    let mut out_tokens = Vec::new();
    let mut attention = Vec::new();
    let mut prev = BOS_ID as usize;
    for _ in 0..max_len {
        let y = tape.gather_rows(embed, &[prev])?;
        let (weights, logits) =
            model.decode_step(&mut tape, params, enc.states, pre, &mut dec, y, None)?;
        let next = argmax(tape.value(logits));
        if next == EOS_ID as usize {
            break;
        }
        attention.push(tape.value(weights).to_vec());
        out_tokens.push(model.target_vocab.token(next as u32).to_string());
        prev = next;
    }
    Ok(Translation { tokens: out_tokens, attention })
}

struct Hyp {
    tokens: Vec<usize>,
    attn: Vec<Vec<f64>>,
    logp: f64,
    dec: DecoderState,
    prev: usize,
}

fn decode_beam(
    model: &TranslationModel,
    params: &ParamSet,
    lang: &str,
    ids: &[u32],
    width: usize,
    max_len: usize,
) -> Result<Translation> {
    let mut tape = Tape::new();
    let ctx = model.forward_ctx(&mut tape, params)?;
    let enc = model.encode(&mut tape, params, &ctx, lang, ids, None)?;
    let pre = model.attn_precompute(&mut tape, params, enc.states)?;
    let (h1, h2) = model.decoder_init(&mut tape, params, enc.bwd_final)?;
    let h = model.config.hidden;
    let zero_h = tape.constant(1, h, vec![0.0; h]);
    let zero_ctx = tape.constant(1, 2 * h, vec![0.0; 2 * h]);
    let embed = tape.param(params, model.tgt_embed);

    let mut live = vec![Hyp {
        tokens: Vec::new(),
        attn: Vec::new(),
        logp: 0.0,
        dec: DecoderState { h1, c1: zero_h, h2, c2: zero_h, context: zero_ctx },
        prev: BOS_ID as usize,
    }];
    // Length-normalized by the number of decode steps (exponent 1.0).
    let norm = |logp: f64, steps: usize| logp / steps.max(1) as f64;
    let mut done: Vec<(f64, Vec<usize>, Vec<Vec<f64>>)> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<Hyp> = Vec::new();
        for hyp in &mut live {
            let y = tape.gather_rows(embed, &[hyp.prev])?;
            let (weights, logits) =
                model.decode_step(&mut tape, params, enc.states, pre, &mut hyp.dec, y, None)?;
            let logp_row = tape.log_softmax_rows(logits);
            let row = tape.value(logp_row).to_vec();
            let attn_row = tape.value(weights).to_vec();
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            for &tok in order.iter().take(width) {
                let mut attn = hyp.attn.clone();
                attn.push(attn_row.clone());
                if tok == EOS_ID as usize {
                    done.push((
                        norm(hyp.logp + row[tok], hyp.tokens.len() + 1),
                        hyp.tokens.clone(),
                        hyp.attn.clone(),
                    ));
                } else {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok);
                    candidates.push(Hyp {
                        tokens,
                        attn,
                        logp: hyp.logp + row[tok],
                        dec: hyp.dec,
                        prev: tok,
                    });
                }
            }
        }
        candidates.sort_by(|a, b| b.logp.partial_cmp(&a.logp).unwrap());
        candidates.truncate(width);
        live = candidates;
    }
    for hyp in live {
        done.push((norm(hyp.logp, hyp.tokens.len().max(1)), hyp.tokens, hyp.attn));
    }
    let best = done
        .into_iter()
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .ok_or_else(|| Error::Eval("beam search produced no hypothesis".into()))?;
    Ok(Translation {
        tokens: best.1.iter().map(|&t| model.target_vocab.token(t as u32).to_string()).collect(),
        attention: best.2,
    })
}
