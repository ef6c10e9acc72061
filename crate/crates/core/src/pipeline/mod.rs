//! Orchestration and evaluation: BLEU scoring, corpus translation,
//! back-translation, gate-activation export, the synthetic cipher task
//! family, experiment sweeps, and the ablation grid.

pub mod backtranslate;
pub mod bleu;
pub mod cipher;
pub mod config;
pub mod experiments;

pub use backtranslate::backtranslate;
pub use bleu::{bleu, sentence_bleu_smoothed, BleuReport};
pub use cipher::{CipherTask, CipherTaskConfig};
pub use config::ExperimentConfig;
pub use experiments::{
    corpus_size_sweep, run_ablation, unknown_token_report, SystemKind,
};

use std::fmt::Write as _;

use crate::corpus::ParallelCorpus;
use crate::nmt::{translate, DecodeMode, TranslationModel};
use crate::parallel::ordered_map;
use crate::tensor::{ParamSet, Tape};
use crate::{Error, Result};

/// Translate every source sentence of a corpus (greedy, in parallel)
/// and score against the target sides. BLEU is computed over the token
/// sequences exactly as given (subword-level when the corpus is
/// subword-segmented).
pub fn evaluate_bleu(
    model: &TranslationModel,
    params: &ParamSet,
    corpus: &ParallelCorpus,
) -> Result<BleuReport> {
    evaluate_bleu_mode(model, params, corpus, DecodeMode::Greedy, 64)
}

pub fn evaluate_bleu_mode(
    model: &TranslationModel,
    params: &ParamSet,
    corpus: &ParallelCorpus,
    mode: DecodeMode,
    max_len: usize,
) -> Result<BleuReport> {
    let hyps = translate_corpus(model, params, corpus, mode, max_len)?;
    let refs: Vec<Vec<String>> = corpus.pairs.iter().map(|(_, t)| t.clone()).collect();
    bleu(&hyps, &refs)
}

/// Greedy/beam translations of every source side, in input order.
pub fn translate_corpus(
    model: &TranslationModel,
    params: &ParamSet,
    corpus: &ParallelCorpus,
    mode: DecodeMode,
    max_len: usize,
) -> Result<Vec<Vec<String>>> {
    let outs: Vec<Result<Vec<String>>> = ordered_map(&corpus.pairs, |(src, _)| {
        Ok(translate(model, params, &corpus.lang, src, mode, max_len)?.tokens)
    });
    outs.into_iter().collect()
}

/// Sequential reference for the bench comparison.
pub fn translate_corpus_seq(
    model: &TranslationModel,
    params: &ParamSet,
    corpus: &ParallelCorpus,
    mode: DecodeMode,
    max_len: usize,
) -> Result<Vec<Vec<String>>> {
    corpus
        .pairs
        .iter()
        .map(|(src, _)| Ok(translate(model, params, &corpus.lang, src, mode, max_len)?.tokens))
        .collect()
}

/// Per-position gate activations as CSV: header `token,expert_1..K`,
/// one row-stochastic line per source position, then one aggregate
/// mean row per expert column.
pub fn export_gate_activations(
    model: &TranslationModel,
    params: &ParamSet,
    lang: &str,
    sentences: &[Vec<String>],
) -> Result<String> {
    let Some(mole) = &model.mole else {
        return Err(Error::Config("model has no mixture-of-experts layer".into()));
    };
    let k_total = mole.expert_count();
    let mut out = String::from("token");
    for e in &mole.experts {
        write!(out, ",expert_{}", e.lang).unwrap();
    }
    out.push('\n');

    let mut sums = vec![0.0; k_total];
    let mut rows = 0usize;
    for sent in sentences {
        let ids: Vec<u32> = sent
            .iter()
            .map(|t| crate::corpus::BatchIndexer::source_id(model, lang, t))
            .collect();
        let mut tape = Tape::new();
        let ctx = model.forward_ctx(&mut tape, params)?;
        let enc = model.encode(&mut tape, params, &ctx, lang, &ids, None)?;
        let probs = enc.gate_probs.expect("gate probs exist when MoLE is present");
        let values = tape.value(probs);
        for (t, token) in sent.iter().enumerate() {
            out.push_str(token);
            for k in 0..k_total {
                let p = values[t * k_total + k];
                sums[k] += p;
                write!(out, ",{}", p).unwrap();
            }
            out.push('\n');
            rows += 1;
        }
    }
    out.push_str("<mean>");
    for s in &sums {
        write!(out, ",{}", s / rows.max(1) as f64).unwrap();
    }
    out.push('\n');
    Ok(out)
}
