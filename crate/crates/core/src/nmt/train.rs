//! Training: masked multilingual NLL with the optional gate objective,
//! one Adam update per batch, freeze rules, evaluation, fine-tuning.
//!
//! Batch gradients are computed on independent per-chunk tapes. Chunk
//! boundaries are fixed by `chunk_size` (never by thread count) and
//! bundles are reduced in chunk order, so a training run is
//! bit-identical sequentially and in parallel.

use std::io::Write;

use crate::corpus::batching::{make_batches, Batch, Schedule};
use crate::corpus::ParallelCorpus;
use crate::mole::apply_freeze_rule;
use crate::parallel::ordered_chunk_map;
use crate::rng::Rng;
use crate::tensor::params::GradBundle;
use crate::tensor::{adam_step, AdamState, ParamSet, Tape};
use crate::{Error, Result};

use super::model::{DropoutCtx, TranslationModel};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub lr: f64,
    pub dropout: f64,
    /// Weight of the gate objective; the MoLE layer is built with it.
    pub lambda_gate: f64,
    pub seed: u64,
    pub schedule: Schedule,
    pub low_resource: Vec<String>,
    /// Sentences per gradient tape. Fixed chunking keeps accumulation
    /// order independent of thread count.
    pub chunk_size: usize,
    /// Evaluate the dev set every this many steps (0 = only at the end).
    pub eval_every: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 32,
            max_steps: 1000,
            lr: 1e-3,
            dropout: 0.4,
            lambda_gate: 1.0,
            seed: 1,
            schedule: Schedule::Uniform,
            low_resource: Vec::new(),
            chunk_size: 4,
            eval_every: 0,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepStats {
    /// Translation NLL per target token plus the weighted gate term.
    pub loss: f64,
    pub nll_per_token: f64,
    /// Gate NLL per source position, when the gate was supervised.
    pub gate_per_pos: Option<f64>,
    /// Fraction of positions whose argmax expert is the batch language.
    pub gate_acc: Option<f64>,
    pub n_tokens: usize,
}

/// One JSON line per eval interval.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub language: String,
    pub nll: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu_dev: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gate_acc: Option<f64>,
}

struct ChunkOut {
    bundle: GradBundle,
    nll: f64,
    gate: f64,
    gate_hits: usize,
    gate_positions: usize,
}

/// One training step: masked per-token NLL (plus the gate term on
/// auxiliary batches), one Adam update, freeze rules honored.
pub fn train_step(
    model: &mut TranslationModel,
    params: &mut ParamSet,
    adam: &mut AdamState,
    batch: &Batch,
    cfg: &TrainingConfig,
    step: u64,
) -> Result<StepStats> {
    let n = batch.size();
    if n == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    let n_tokens: usize = (0..n).map(|i| batch.tgt.lens[i] + 1).sum();
    let n_positions: usize = batch.src.lens.iter().sum();
    let gate_active = model
        .mole
        .as_ref()
        .map(|m| !batch.is_low_resource && m.expert_index(&batch.lang).is_some())
        .unwrap_or(false);
    let lambda = model.mole.as_ref().map(|m| m.lambda_gate).unwrap_or(0.0);

    let diag = |e: Error| {
        Error::Eval(format!(
            "aborted at step {step}, language {}, batch hash {:016x}: {e}",
            batch.lang,
            batch.content_hash()
        ))
    };

    let chunks: Vec<Result<ChunkOut>> = ordered_chunk_map(n, cfg.chunk_size, |range| {
        let chunk_id = (range.start / cfg.chunk_size.max(1)) as u64;
        let mut drop_rng = Rng::seed_stream(cfg.seed ^ 0xD20F_0517, (step << 20) | chunk_id);
        let mut tape = Tape::new();
        let ctx = model.forward_ctx(&mut tape, params)?;
        let mut nll_total: Option<crate::tensor::Var> = None;
        let mut gate_total: Option<crate::tensor::Var> = None;
        let mut gate_hits = 0usize;
        let mut gate_positions = 0usize;
        for i in range {
            let src = batch.src.tokens(i);
            let tgt = batch.tgt.tokens(i);
            let mut dropout = DropoutCtx { rate: cfg.dropout, rng: &mut drop_rng };
            let out = model.sentence_loss(
                &mut tape,
                params,
                &ctx,
                &batch.lang,
                src,
                tgt,
                if cfg.dropout > 0.0 { Some(&mut dropout) } else { None },
            )?;
            nll_total = Some(match nll_total {
                None => out.nll_sum,
                Some(acc) => tape.add(acc, out.nll_sum)?,
            });
            if gate_active {
                if let Some((gs, positions)) = out.gate_sum {
                    gate_total = Some(match gate_total {
                        None => gs,
                        Some(acc) => tape.add(acc, gs)?,
                    });
                    gate_positions += positions;
                }
                if let Some(gp) = out.gate_probs {
                    let (rows, k_total) = tape.shape(gp);
                    let values = tape.value(gp);
                    let k = model
                        .mole
                        .as_ref()
                        .and_then(|m| m.expert_index(&batch.lang))
                        .expect("gate_active implies an expert");
                    for r in 0..rows {
                        let row = &values[r * k_total..(r + 1) * k_total];
                        let argmax = row
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                            .unwrap()
                            .0;
                        if argmax == k {
                            gate_hits += 1;
                        }
                    }
                }
            }
        }
        let nll_var = nll_total.expect("non-empty chunk");
        let nll_value = tape.scalar(nll_var);
        let mut loss = tape.scale(nll_var, 1.0 / n_tokens as f64);
        let gate_value = match gate_total {
            Some(g) if lambda > 0.0 => {
                let value = tape.scalar(g);
                let scaled = tape.scale(g, lambda / n_positions as f64);
                loss = tape.add(loss, scaled)?;
                value
            }
            Some(g) => tape.scalar(g),
            None => 0.0,
        };
        let bundle = tape.backward(loss)?;
        Ok(ChunkOut { bundle, nll: nll_value, gate: gate_value, gate_hits, gate_positions })
    });

    params.zero_grads();
    let mut nll_sum = 0.0;
    let mut gate_sum = 0.0;
    let mut gate_hits = 0usize;
    let mut gate_positions = 0usize;
    for chunk in chunks {
        let out = chunk.map_err(diag)?;
        params.accumulate(&out.bundle);
        nll_sum += out.nll;
        gate_sum += out.gate;
        gate_hits += out.gate_hits;
        gate_positions += out.gate_positions;
    }
    if !nll_sum.is_finite() {
        return Err(diag(Error::Eval(format!("non-finite batch NLL {nll_sum}"))));
    }
    // Parameters outside this batch's graph (other languages' tables)
    // carry a true zero gradient.
    params.mark_all_grads_set();

    let skip = model
        .mole
        .as_ref()
        .map(|m| apply_freeze_rule(params.len(), m, &batch.lang, &cfg.low_resource));
    if let Some(max_norm) = cfg.clip_norm {
        params.clip_global_norm(max_norm, skip.as_deref());
    }
    adam_step(params, adam, skip.as_deref())?;
    model.steps_trained += 1;

    let nll_per_token = nll_sum / n_tokens as f64;
    let gate_per_pos = gate_active.then(|| gate_sum / n_positions.max(1) as f64);
    let gate_acc = (gate_active && gate_positions > 0)
        .then(|| gate_hits as f64 / gate_positions as f64);
    Ok(StepStats {
        loss: nll_per_token + lambda * gate_per_pos.unwrap_or(0.0),
        nll_per_token,
        gate_per_pos,
        gate_acc,
        n_tokens,
    })
}

/// Mean per-token NLL over a corpus, no updates, no dropout.
pub fn evaluate_nll(
    model: &TranslationModel,
    params: &ParamSet,
    corpus: &ParallelCorpus,
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot evaluate an empty corpus".into()));
    }
    let totals: Vec<Result<(f64, usize)>> = ordered_chunk_map(corpus.len(), 8, |range| {
        let mut tape = Tape::new();
        let ctx = model.forward_ctx(&mut tape, params)?;
        let mut nll = 0.0;
        let mut tokens = 0usize;
        for i in range {
            let (src, tgt) = &corpus.pairs[i];
            let src_ids: Vec<u32> =
                src.iter().map(|t| crate::corpus::BatchIndexer::source_id(model, &corpus.lang, t)).collect();
            let tgt_ids: Vec<u32> =
                tgt.iter().map(|t| crate::corpus::BatchIndexer::target_id(model, t)).collect();
            let out =
                model.sentence_loss(&mut tape, params, &ctx, &corpus.lang, &src_ids, &tgt_ids, None)?;
            nll += tape.scalar(out.nll_sum);
            tokens += out.n_target_tokens;
        }
        Ok((nll, tokens))
    });
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for t in totals {
        let (n, c) = t?;
        nll += n;
        tokens += c;
    }
    Ok(nll / tokens.max(1) as f64)
}

/// Train for `cfg.max_steps` batches over mixed corpora, logging the
/// running NLL (and dev scores when a dev set is given).
pub fn run_training(
    model: &mut TranslationModel,
    params: &mut ParamSet,
    adam: &mut AdamState,
    corpora: &[ParallelCorpus],
    cfg: &TrainingConfig,
    dev: Option<&ParallelCorpus>,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<TrainLogEntry>> {
    let batches: Vec<Batch> = {
        let stream = make_batches(
            corpora,
            cfg.batch_size,
            cfg.schedule,
            cfg.seed,
            model,
            &cfg.low_resource,
        )?;
        stream.take(cfg.max_steps as usize).collect()
    };
    let mut entries = Vec::new();
    let mut last_gate_acc = None;
    for (i, batch) in batches.iter().enumerate() {
        let step = i as u64 + 1;
        let stats = train_step(model, params, adam, batch, cfg, step)?;
        if stats.gate_acc.is_some() {
            last_gate_acc = stats.gate_acc;
        }
        let last = step == cfg.max_steps;
        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) || last {
            let (nll, bleu_dev) = match dev {
                Some(d) => {
                    let nll = evaluate_nll(model, params, d)?;
                    let bleu = crate::pipeline::evaluate_bleu(model, params, d)?.bleu;
                    (nll, Some(bleu))
                }
                None => (stats.nll_per_token, None),
            };
            let entry = TrainLogEntry {
                step,
                language: batch.lang.clone(),
                nll,
                bleu_dev,
                gate_acc: last_gate_acc,
            };
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &entry)
                    .map_err(|e| Error::Format(e.to_string()))?;
                writeln!(w)?;
            }
            entries.push(entry);
        }
    }
    Ok(entries)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub dev_nll: f64,
    pub dev_bleu: f64,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct FineTuneReport {
    /// Entry 0 is the zero-shot state before any update.
    pub epochs: Vec<EpochMetrics>,
    pub warnings: Vec<String>,
}

/// Continue training a pretrained model on one low-resource corpus.
/// The new language is treated as low-resource, so MoLE stays frozen;
/// epoch 0 of the report is the untouched zero-shot evaluation.
pub fn fine_tune(
    model: &mut TranslationModel,
    params: &mut ParamSet,
    adam: &mut AdamState,
    corpus: &ParallelCorpus,
    dev: &ParallelCorpus,
    epochs: usize,
    cfg: &TrainingConfig,
) -> Result<FineTuneReport> {
    let mut warnings = Vec::new();
    if model.langs.iter().any(|l| l == &corpus.lang) {
        warnings.push(format!(
            "language `{}` overlaps the pretraining set; fine-tuning continues",
            corpus.lang
        ));
    }
    let mut cfg = cfg.clone();
    if !cfg.low_resource.iter().any(|l| l == &corpus.lang) {
        cfg.low_resource.push(corpus.lang.clone());
    }

    let mut report = FineTuneReport { epochs: Vec::new(), warnings };
    let eval = |model: &TranslationModel, params: &ParamSet| -> Result<(f64, f64)> {
        let nll = evaluate_nll(model, params, dev)?;
        let bleu = crate::pipeline::evaluate_bleu(model, params, dev)?.bleu;
        Ok((nll, bleu))
    };
    let (dev_nll, dev_bleu) = eval(model, params)?;
    report.epochs.push(EpochMetrics { epoch: 0, dev_nll, dev_bleu, steps: model.steps_trained });

    let batches_per_epoch = corpus.len().div_ceil(cfg.batch_size);
    let corpora = vec![corpus.clone()];
    let batches: Vec<Batch> = {
        let stream = make_batches(
            &corpora,
            cfg.batch_size,
            cfg.schedule,
            cfg.seed,
            model,
            &cfg.low_resource,
        )?;
        stream.take(batches_per_epoch * epochs).collect()
    };
    for (i, batch) in batches.iter().enumerate() {
        let step = model.steps_trained + 1;
        train_step(model, params, adam, batch, &cfg, step)?;
        if (i + 1) % batches_per_epoch == 0 {
            let epoch = (i + 1) / batches_per_epoch;
            let (dev_nll, dev_bleu) = eval(model, params)?;
            report.epochs.push(EpochMetrics {
                epoch,
                dev_nll,
                dev_bleu,
                steps: model.steps_trained,
            });
        }
    }
    Ok(report)
}
