//! Experiment machinery: data preparation (segmentation, embeddings,
//! projections), system construction for every ablation arm, training
//! drivers, the corpus-size sweep, the unknown-token report, and the
//! ablation grid. Every artifact embeds the resolved config and seed.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::bpe::{learn_bpe, BpeModel};
use crate::corpus::vocab::Vocabulary;
use crate::corpus::ParallelCorpus;
use crate::embeddings::{train_skipgram, EmbeddingTable, SkipgramConfig};
use crate::mole::MoleLayer;
use crate::nmt::train::run_training;
use crate::nmt::{SourceProvider, TrainLogEntry, TranslationModel, UlrLang};
use crate::tensor::AdamState;
use crate::projection::{extract_seeds, project, solve_procrustes, OrthogonalMap, SeedDictionary};
use crate::rng::Rng;
use crate::tensor::ParamSet;
use crate::ulr::{frequency_ranks, InterpolationRule, QuerySpace, UniversalTokenSet};
use crate::{Error, Result};

use super::cipher::{standard_splits, CipherTask, CipherTaskConfig};
use super::config::{ExperimentConfig, TaskKind};

/// The ablation arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SystemKind {
    /// Single-source model on the low-resource pairs only.
    Vanilla,
    /// Multilingual baseline with a language-marked union vocabulary.
    Multi,
    /// Vanilla after replacing every source token with its closest
    /// universal token in the projected embedding space.
    ClosestUniToken,
    /// Universal mixtures with the similarity transform frozen to I.
    MultiUlrFrozenA,
    MultiUlr,
    MultiUlrMole,
}

impl SystemKind {
    pub fn label(self) -> &'static str {
        match self {
            SystemKind::Vanilla => "vanilla",
            SystemKind::Multi => "multi",
            SystemKind::ClosestUniToken => "closest-uni-token",
            SystemKind::MultiUlrFrozenA => "multi+ulr(A=I)",
            SystemKind::MultiUlr => "multi+ulr",
            SystemKind::MultiUlrMole => "multi+ulr+mole",
        }
    }

    pub fn uses_ulr(self) -> bool {
        matches!(
            self,
            SystemKind::MultiUlrFrozenA | SystemKind::MultiUlr | SystemKind::MultiUlrMole
        )
    }
}

/// Everything data-side an experiment needs, prepared once per seed:
/// segmented corpora, per-language query embeddings, target keys,
/// frequency ranks, seed dictionaries and solved projections.
pub struct Resources {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub langs: Vec<String>,
    pub low_index: usize,
    pub aux_train: Vec<ParallelCorpus>,
    pub low_train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
    pub src_bpe: Vec<BpeModel>,
    pub tgt_bpe: BpeModel,
    pub mono_seg: Vec<Vec<Vec<String>>>,
    pub tgt_mono_seg: Vec<Vec<String>>,
    pub queries: Vec<EmbeddingTable>,
    pub keys: EmbeddingTable,
    pub ranks: Vec<HashMap<String, u32>>,
    pub seed_dicts: Vec<SeedDictionary>,
    pub projections: Vec<OrthogonalMap>,
    pub projected: Vec<EmbeddingTable>,
    pub universal_tokens: Vec<String>,
}

/// Positional aligned-token stream from a parallel corpus; the cheap
/// stand-in for an external word aligner.
pub fn positional_pair_stream(corpus: &ParallelCorpus) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (src, tgt) in &corpus.pairs {
        for i in 0..src.len().min(tgt.len()) {
            out.push((src[i].clone(), tgt[i].clone()));
        }
    }
    out
}

/// Prepare resources for one seed, dispatching on the task kind.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Resources> {
    match cfg.task {
        TaskKind::Cipher => prepare_cipher(cfg, seed),
        TaskKind::Files => prepare_files(cfg),
    }
}

/// Prepare cipher-task resources for one seed.
pub fn prepare_cipher(cfg: &ExperimentConfig, seed: u64) -> Result<Resources> {
    let task = CipherTask::generate(&CipherTaskConfig {
        n_langs: cfg.aux_langs + 1,
        sentences: cfg.pool_sentences,
        seed,
        reorder: cfg.reorder,
    })?;
    let splits =
        standard_splits(&task, cfg.aux_pairs, cfg.low_pairs, cfg.dev_size, cfg.test_size)?;
    let langs = task.langs.clone();
    let monos: Vec<Vec<Vec<String>>> =
        (0..langs.len()).map(|k| task.monolingual(k)).collect();
    let tgt_mono: Vec<Vec<String>> = task.monolingual_target().to_vec();
    build_resources(
        cfg.clone(),
        seed,
        langs,
        splits.low_index,
        splits.aux_train,
        splits.low_train,
        splits.dev,
        splits.test,
        monos,
        tgt_mono,
    )
}

/// Prepare resources from file-backed corpora (`data.task = files`).
pub fn prepare_files(cfg: &ExperimentConfig) -> Result<Resources> {
    if cfg.pair_paths.is_empty() {
        return Err(Error::Config("files task: no `data.pair.<lang>` entries".into()));
    }
    let low_lang = cfg
        .low_resource_lang
        .clone()
        .ok_or_else(|| Error::Config("files task: `data.low_resource` is required".into()))?;
    let mut langs: Vec<String> = cfg.pair_paths.iter().map(|(l, _)| l.clone()).collect();
    if !langs.contains(&low_lang) {
        return Err(Error::Config(format!("low-resource language `{low_lang}` has no pairs")));
    }
    // Low-resource language goes last.
    langs.retain(|l| l != &low_lang);
    langs.push(low_lang.clone());
    let low_index = langs.len() - 1;

    let mut corpora = Vec::new();
    for lang in &langs {
        let path = &cfg.pair_paths.iter().find(|(l, _)| l == lang).unwrap().1;
        corpora.push(
            ParallelCorpus::from_tsv(lang, Path::new(path))?.filter_len(cfg.max_sentence_len),
        );
    }
    let low_train = corpora.pop().unwrap();
    let dev = match &cfg.dev_path {
        Some(p) => ParallelCorpus::from_tsv(&low_lang, Path::new(p))?
            .filter_len(cfg.max_sentence_len),
        None => return Err(Error::Config("files task: `data.dev` is required".into())),
    };
    let test = match &cfg.test_path {
        Some(p) => ParallelCorpus::from_tsv(&low_lang, Path::new(p))?
            .filter_len(cfg.max_sentence_len),
        None => dev.clone(),
    };
    let mut monos = Vec::new();
    for lang in &langs {
        let mono = match cfg.mono_paths.iter().find(|(l, _)| l == lang) {
            Some((_, p)) => crate::corpus::load_monolingual(Path::new(p))?,
            None => {
                // Fall back to the parallel source side.
                let c = if lang == &low_lang {
                    &low_train
                } else {
                    &corpora[langs.iter().position(|l| l == lang).unwrap()]
                };
                c.pairs.iter().map(|(s, _)| s.clone()).collect()
            }
        };
        monos.push(mono);
    }
    let tgt_mono: Vec<Vec<String>> = corpora
        .iter()
        .chain([&low_train])
        .flat_map(|c| c.pairs.iter().map(|(_, t)| t.clone()))
        .collect();
    let seed = cfg.seeds.first().copied().unwrap_or(1);
    build_resources(
        cfg.clone(),
        seed,
        langs,
        low_index,
        corpora,
        low_train,
        dev,
        test,
        monos,
        tgt_mono,
    )
}

#[allow(clippy::too_many_arguments)]
fn build_resources(
    cfg: ExperimentConfig,
    seed: u64,
    langs: Vec<String>,
    low_index: usize,
    aux_train: Vec<ParallelCorpus>,
    low_train: ParallelCorpus,
    dev: ParallelCorpus,
    test: ParallelCorpus,
    monos: Vec<Vec<Vec<String>>>,
    tgt_mono: Vec<Vec<String>>,
) -> Result<Resources> {
    // Subword models, learned per language on monolingual text.
    let src_bpe: Vec<BpeModel> = monos
        .iter()
        .map(|m| learn_bpe(m, cfg.bpe_num_ops))
        .collect::<Result<_>>()?;
    let tgt_bpe = learn_bpe(&tgt_mono, cfg.bpe_num_ops)?;

    let segment = |c: ParallelCorpus, k: usize| -> ParallelCorpus {
        c.apply_bpe(&src_bpe[k], &tgt_bpe).filter_len(cfg.max_sentence_len)
    };
    let aux_train: Vec<ParallelCorpus> = aux_train
        .into_iter()
        .enumerate()
        .map(|(k, c)| segment(c, k))
        .collect();
    let low_train = segment(low_train, low_index);
    let dev = segment(dev, low_index);
    let test = segment(test, low_index);

    let mono_seg: Vec<Vec<Vec<String>>> =
        monos.iter().enumerate().map(|(k, m)| src_bpe[k].apply_corpus(m)).collect();
    let tgt_mono_seg = tgt_bpe.apply_corpus(&tgt_mono);

    // Monolingual embeddings over subword units, unit-normalized.
    let queries: Vec<EmbeddingTable> = mono_seg
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let sg = SkipgramConfig { seed: seed ^ (0xE0 + k as u64), ..cfg.skipgram.clone() };
            Ok(train_skipgram(&langs[k], m, &sg)?.normalize_rows())
        })
        .collect::<Result<_>>()?;
    let sg = SkipgramConfig { seed: seed ^ 0xEF, ..cfg.skipgram.clone() };
    let keys = train_skipgram("en", &tgt_mono_seg, &sg)?.normalize_rows();

    let ranks: Vec<HashMap<String, u32>> = mono_seg.iter().map(|m| frequency_ranks(m)).collect();
    let tgt_ranks = frequency_ranks(&tgt_mono_seg);

    // Universal tokens: the most frequent target subwords with key
    // vectors, up to M.
    let mut by_rank: Vec<(&String, &u32)> = tgt_ranks.iter().collect();
    by_rank.sort_by_key(|(_, &r)| r);
    let universal_tokens: Vec<String> = by_rank
        .into_iter()
        .filter(|(t, _)| keys.vector(t).is_some())
        .take(cfg.universal_size)
        .map(|(t, _)| t.clone())
        .collect();

    // Seeds from positional alignment of whatever parallel data each
    // language has, then the orthogonality-constrained solve.
    let mut seed_dicts = Vec::new();
    let mut projections = Vec::new();
    let mut projected = Vec::new();
    for (k, lang) in langs.iter().enumerate() {
        let corpus = if k == low_index { &low_train } else { &aux_train[k] };
        let stream = positional_pair_stream(corpus);
        let dict = extract_seeds(lang, stream, cfg.seed_min_count, cfg.max_seeds)?;
        let solution = solve_procrustes(&queries[k], &keys, &dict)?;
        projected.push(project(&queries[k], &solution.map)?);
        projections.push(solution.map);
        seed_dicts.push(dict);
    }

    Ok(Resources {
        cfg,
        seed,
        langs,
        low_index,
        aux_train,
        low_train,
        dev,
        test,
        src_bpe,
        tgt_bpe,
        mono_seg,
        tgt_mono_seg,
        queries,
        keys,
        ranks,
        seed_dicts,
        projections,
        projected,
        universal_tokens,
    })
}

impl Resources {
    pub fn low_lang(&self) -> &str {
        &self.langs[self.low_index]
    }

    pub fn aux_langs(&self) -> Vec<String> {
        self.langs
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != self.low_index)
            .map(|(_, l)| l.clone())
            .collect()
    }

    /// Source tokens present in the given training corpora (the
    /// reference set for out-of-vocabulary bucketing).
    pub fn parallel_source_vocab(&self, corpora: &[ParallelCorpus]) -> HashSet<String> {
        corpora
            .iter()
            .flat_map(|c| c.pairs.iter().flat_map(|(s, _)| s.iter().cloned()))
            .collect()
    }
}

/// Replace every source token with its closest universal token in the
/// projected embedding space (query vectors vs key vectors); tokens
/// without a query vector pass through unchanged.
pub fn closest_uni_token_corpus(
    corpus: &ParallelCorpus,
    projected: &EmbeddingTable,
    keys: &EmbeddingTable,
    universal_tokens: &[String],
) -> Result<ParallelCorpus> {
    let mut uni_keys = EmbeddingTable::new(&keys.lang, keys.dim);
    for t in universal_tokens {
        if let Some(v) = keys.vector(t) {
            uni_keys.push(t, v)?;
        }
    }
    let uni_keys = uni_keys.normalize_rows();
    let mut cache: HashMap<&str, String> = HashMap::new();
    let mut pairs = Vec::with_capacity(corpus.len());
    for (src, tgt) in &corpus.pairs {
        let mut new_src = Vec::with_capacity(src.len());
        for tok in src {
            let replaced = match cache.get(tok.as_str()) {
                Some(r) => r.clone(),
                None => {
                    let r = match projected.vector(tok) {
                        Some(q) => uni_keys
                            .nearest_neighbors(q, 1)?
                            .first()
                            .map(|(t, _)| t.clone())
                            .unwrap_or_else(|| tok.clone()),
                        None => tok.clone(),
                    };
                    cache.insert(tok, r.clone());
                    r
                }
            };
            new_src.push(replaced);
        }
        pairs.push((new_src, tgt.clone()));
    }
    let mut out = ParallelCorpus::new(&corpus.lang, pairs);
    out.synthetic = corpus.synthetic;
    Ok(out)
}

pub struct BuiltSystem {
    pub model: TranslationModel,
    pub params: ParamSet,
    /// The training corpora this system consumes.
    pub corpora: Vec<ParallelCorpus>,
}

/// Assemble a system and its training corpora.
///
/// `low_pairs` caps the low-resource corpus (0 = zero-shot: the
/// language is excluded from training but keeps its query space).
/// `synthetic` is appended to the low-resource corpus when given.
pub fn build_system(
    kind: SystemKind,
    res: &Resources,
    low_pairs: usize,
    synthetic: Option<&ParallelCorpus>,
) -> Result<BuiltSystem> {
    let mut rng = Rng::seed_stream(res.seed, 0x0DE1);
    let mut params = ParamSet::new();
    let cfg = &res.cfg;
    let low_lang = res.low_lang().to_string();

    let mut low_train = res.low_train.clone().take(low_pairs);
    if let Some(s) = synthetic {
        if s.lang != low_lang {
            return Err(Error::Config(format!(
                "synthetic corpus is for `{}`, the low-resource language is `{low_lang}`",
                s.lang
            )));
        }
        low_train.pairs.extend(s.pairs.iter().cloned());
        low_train.synthetic = true;
    }

    let (corpora, trained_langs): (Vec<ParallelCorpus>, Vec<String>) = match kind {
        SystemKind::Vanilla | SystemKind::ClosestUniToken => {
            if low_train.is_empty() {
                return Err(Error::Config(format!(
                    "{} needs low-resource pairs; zero-shot is undefined for it",
                    kind.label()
                )));
            }
            let corpus = if kind == SystemKind::ClosestUniToken {
                closest_uni_token_corpus(
                    &low_train,
                    &res.projected[res.low_index],
                    &res.keys,
                    &res.universal_tokens,
                )?
            } else {
                low_train.clone()
            };
            (vec![corpus], vec![low_lang.clone()])
        }
        _ => {
            let mut corpora = res.aux_train.clone();
            let mut langs = res.aux_langs();
            if !low_train.is_empty() {
                corpora.push(low_train.clone());
                langs.push(low_lang.clone());
            }
            (corpora, langs)
        }
    };

    // Target vocabulary over the target sides of the training data.
    let tgt_sentences: Vec<Vec<String>> =
        corpora.iter().flat_map(|c| c.pairs.iter().map(|(_, t)| t.clone())).collect();
    let target_vocab = Vocabulary::from_sentences(&tgt_sentences);

    let source = if kind.uses_ulr() {
        let uts = UniversalTokenSet::build(
            &mut params,
            &res.keys,
            &res.universal_tokens,
            cfg.model.embed_dim,
            cfg.model.init_scale,
            &mut rng,
        )?;
        if kind == SystemKind::MultiUlrFrozenA {
            params.set_trainable(uts.a, false);
        }
        // Every language keeps its lexicon, including a zero-shot
        // low-resource language.
        let mut langs = Vec::new();
        for (k, lang) in res.langs.iter().enumerate() {
            let mut vocab = Vocabulary::from_sentences(&res.mono_seg[k]);
            // Parallel-side tokens missing from mono still get ids.
            let corpus = if k == res.low_index { &res.low_train } else { &res.aux_train[k] };
            for (src, _) in &corpus.pairs {
                for t in src {
                    vocab.add(t);
                }
            }
            let query_space = QuerySpace::build(vocab, &res.projected[k], &res.ranks[k]);
            let e_i = params.add_uniform(
                &format!("ulr.e_i.{lang}"),
                query_space.vocab.len(),
                cfg.model.embed_dim,
                -cfg.model.init_scale,
                cfg.model.init_scale,
                &mut rng,
            )?;
            let rule = InterpolationRule { e_i, top_frequent_k: cfg.ulr.top_frequent_k };
            langs.push((lang.clone(), UlrLang { query_space, rule }));
        }
        SourceProvider::Ulr { uts, langs, config: cfg.ulr.clone() }
    } else {
        let marked: Vec<(String, Vec<Vec<String>>)> = corpora
            .iter()
            .map(|c| (c.lang.clone(), c.pairs.iter().map(|(s, _)| s.clone()).collect()))
            .collect();
        let vocab = crate::corpus::build_multilingual_vocab(&marked, '|')?;
        let table = params.add_uniform(
            "src.embed",
            vocab.len(),
            cfg.model.embed_dim,
            -cfg.model.init_scale,
            cfg.model.init_scale,
            &mut rng,
        )?;
        SourceProvider::Baseline { vocab, table, delim: '|' }
    };

    let mole = if kind == SystemKind::MultiUlrMole {
        Some(MoleLayer::build(
            &mut params,
            &res.aux_langs(),
            2 * cfg.model.hidden,
            2 * cfg.model.hidden,
            cfg.train.lambda_gate,
            cfg.model.init_scale,
            &mut rng,
        )?)
    } else {
        None
    };

    let mut model = TranslationModel::build(
        &mut params,
        cfg.model.clone(),
        source,
        mole,
        target_vocab,
        trained_langs,
        vec![low_lang],
        res.seed,
        &mut rng,
    )?;
    model.bpe_refs = res
        .langs
        .iter()
        .map(|l| (l.clone(), format!("bpe.{l}.txt")))
        .collect();
    Ok(BuiltSystem { model, params, corpora })
}

pub struct TrainedSystem {
    pub model: TranslationModel,
    pub params: ParamSet,
    pub adam: AdamState,
    pub log: Vec<TrainLogEntry>,
}

/// Build and train one system for `max_steps` (config override).
pub fn train_system(
    kind: SystemKind,
    res: &Resources,
    low_pairs: usize,
    synthetic: Option<&ParallelCorpus>,
    max_steps: Option<u64>,
) -> Result<TrainedSystem> {
    let built = build_system(kind, res, low_pairs, synthetic)?;
    let BuiltSystem { mut model, mut params, corpora } = built;
    let mut cfg = res.cfg.train.clone();
    cfg.seed = res.seed;
    cfg.low_resource = vec![res.low_lang().to_string()];
    if let Some(steps) = max_steps {
        cfg.max_steps = steps;
    }
    let mut adam = AdamState::new(&params, cfg.lr);
    let log = run_training(&mut model, &mut params, &mut adam, &corpora, &cfg, None, None)?;
    Ok(TrainedSystem { model, params, adam, log })
}

/// Train a reverse-direction model (target language → low-resource
/// language) for back-translation.
pub fn train_reverse_model(res: &Resources, max_steps: Option<u64>) -> Result<TrainedSystem> {
    let swapped = ParallelCorpus::new(
        "en",
        res.low_train.pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect(),
    );
    if swapped.is_empty() {
        return Err(Error::Input("no low-resource pairs to train a reverse model on".into()));
    }
    let mut rng = Rng::seed_stream(res.seed, 0x5EED_4B17);
    let mut params = ParamSet::new();
    let cfg = &res.cfg;
    let marked = vec![(
        "en".to_string(),
        swapped.pairs.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>(),
    )];
    let vocab = crate::corpus::build_multilingual_vocab(&marked, '|')?;
    let table = params.add_uniform(
        "src.embed",
        vocab.len(),
        cfg.model.embed_dim,
        -cfg.model.init_scale,
        cfg.model.init_scale,
        &mut rng,
    )?;
    let tgt_sentences: Vec<Vec<String>> =
        swapped.pairs.iter().map(|(_, t)| t.clone()).collect();
    let target_vocab = Vocabulary::from_sentences(&tgt_sentences);
    let mut model = TranslationModel::build(
        &mut params,
        cfg.model.clone(),
        SourceProvider::Baseline { vocab, table, delim: '|' },
        None,
        target_vocab,
        vec!["en".into()],
        vec![],
        res.seed,
        &mut rng,
    )?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = res.seed;
    tcfg.low_resource = vec![];
    if let Some(steps) = max_steps {
        tcfg.max_steps = steps;
    }
    let mut adam = AdamState::new(&params, tcfg.lr);
    let corpora = vec![swapped];
    let log = run_training(&mut model, &mut params, &mut adam, &corpora, &tcfg, None, None)?;
    Ok(TrainedSystem { model, params, adam, log })
}

// ── Reports ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub size: usize,
    pub system: String,
    pub seed: u64,
    pub bleu: f64,
}

/// Train vanilla / multilingual / multilingual+ULR at each corpus size
/// with shared seeds and score the test set. Returns rows plus CSV and
/// plot-ready JSON embedding the resolved config.
pub fn corpus_size_sweep(
    cfg: &ExperimentConfig,
    sizes: &[usize],
) -> Result<(Vec<SweepRow>, String, String)> {
    for &s in sizes {
        if s > cfg.low_pairs.max(cfg.pool_sentences) {
            return Err(Error::Param(format!("sweep size {s} exceeds the available corpus")));
        }
    }
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let mut cfg_seed = cfg.clone();
        cfg_seed.low_pairs = sizes.iter().copied().max().unwrap_or(cfg.low_pairs);
        let res = prepare_cipher(&cfg_seed, seed)?;
        for &size in sizes {
            for kind in [SystemKind::Vanilla, SystemKind::Multi, SystemKind::MultiUlr] {
                if size == 0 && !kind.uses_ulr() {
                    // Without any pairs the vanilla model is undefined
                    // and the multilingual baseline cannot represent
                    // the unseen language either; report 0.
                    rows.push(SweepRow { size, system: kind.label().into(), seed, bleu: 0.0 });
                    continue;
                }
                let trained = train_system(kind, &res, size, None, None)?;
                let report =
                    super::evaluate_bleu(&trained.model, &trained.params, &res.test)?;
                rows.push(SweepRow {
                    size,
                    system: kind.label().into(),
                    seed,
                    bleu: report.bleu,
                });
            }
        }
    }
    let mut csv = String::from("size,system,seed,bleu\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{}", r.size, r.system, r.seed, r.bleu).unwrap();
    }
    let json = format!(
        "{{\"config\":{},\"rows\":{}}}",
        cfg.resolved_json(),
        serde_json::to_string(&rows).expect("rows serialize")
    );
    Ok((rows, csv, json))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct OovBucket {
    /// Bucket covers OOV fractions in (lo, hi]; the first bucket is
    /// exactly 0.
    pub lo: f64,
    pub hi: f64,
    pub sentences: usize,
    /// None when the bucket is empty (skipped, noted).
    pub bleu: Option<f64>,
}

/// Bucket test sentences by the fraction of source tokens unseen in
/// the parallel training data and score each bucket separately.
pub fn unknown_token_report(
    model: &TranslationModel,
    params: &ParamSet,
    test: &ParallelCorpus,
    train_source_vocab: &HashSet<String>,
    edges: &[f64],
) -> Result<Vec<OovBucket>> {
    let mut buckets: Vec<(f64, f64, Vec<usize>)> = Vec::new();
    let mut lo = 0.0;
    buckets.push((-1.0, 0.0, Vec::new())); // the exact-zero bucket
    for &hi in edges {
        if hi > 0.0 {
            buckets.push((lo, hi, Vec::new()));
            lo = hi;
        }
    }
    if lo < 1.0 {
        buckets.push((lo, 1.0, Vec::new()));
    }
    for (i, (src, _)) in test.pairs.iter().enumerate() {
        let oov = src.iter().filter(|t| !train_source_vocab.contains(*t)).count();
        let frac = oov as f64 / src.len().max(1) as f64;
        let slot = if frac == 0.0 {
            0
        } else {
            buckets
                .iter()
                .position(|(l, h, _)| frac > *l && frac <= *h)
                .expect("fraction in (0,1] falls in a bucket")
        };
        buckets[slot].2.push(i);
    }
    let mut out = Vec::new();
    for (lo, hi, members) in buckets {
        let bleu = if members.is_empty() {
            None
        } else {
            let sub = ParallelCorpus::new(
                &test.lang,
                members.iter().map(|&i| test.pairs[i].clone()).collect(),
            );
            Some(super::evaluate_bleu(model, params, &sub)?.bleu)
        };
        out.push(OovBucket { lo: lo.max(0.0), hi, sentences: members.len(), bleu });
    }
    Ok(out)
}

/// One ablation row: system label plus its test BLEU or failure note.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub system: String,
    pub bleu: Option<f64>,
    pub error: Option<String>,
}

/// Train and evaluate the ablation grid at desk scale with shared
/// seeds. Sub-run failures become row markers, not a global failure.
pub fn run_ablation(cfg: &ExperimentConfig, seed: u64) -> Result<(Vec<AblationRow>, String)> {
    let res = prepare_cipher(cfg, seed)?;
    let mut rows = Vec::new();

    let eval = |label: String, outcome: Result<TrainedSystem>| {
        match outcome
            .and_then(|t| Ok(super::evaluate_bleu(&t.model, &t.params, &res.test)?.bleu))
        {
            Ok(bleu) => AblationRow { system: label, bleu: Some(bleu), error: None },
            Err(e) => AblationRow { system: label, bleu: None, error: Some(e.to_string()) },
        }
    };

    // Synthetic corpus for the +BT arms, from a reverse model.
    let synthetic = train_reverse_model(&res, None).and_then(|reverse| {
        super::backtranslate(
            &reverse.model,
            &reverse.params,
            "en",
            res.low_lang(),
            &res.tgt_mono_seg[..res.cfg.aux_pairs.min(res.tgt_mono_seg.len())],
            res.cfg.low_pairs * 4,
            res.cfg.max_decode_len,
        )
    });

    for kind in [
        SystemKind::Vanilla,
        SystemKind::Multi,
        SystemKind::ClosestUniToken,
        SystemKind::MultiUlrFrozenA,
        SystemKind::MultiUlr,
    ] {
        rows.push(eval(kind.label().into(), train_system(kind, &res, cfg.low_pairs, None, None)));
    }
    match &synthetic {
        Ok(synth) => {
            rows.push(eval(
                "multi+bt".into(),
                train_system(SystemKind::Multi, &res, cfg.low_pairs, Some(synth), None),
            ));
            rows.push(eval(
                "multi+ulr+bt".into(),
                train_system(SystemKind::MultiUlr, &res, cfg.low_pairs, Some(synth), None),
            ));
        }
        Err(e) => {
            for label in ["multi+bt", "multi+ulr+bt"] {
                rows.push(AblationRow {
                    system: label.into(),
                    bleu: None,
                    error: Some(format!("back-translation unavailable: {e}")),
                });
            }
        }
    }
    rows.push(eval(
        SystemKind::MultiUlrMole.label().into(),
        train_system(SystemKind::MultiUlrMole, &res, cfg.low_pairs, None, None),
    ));
    if let Ok(synth) = &synthetic {
        rows.push(eval(
            "multi+ulr+mole+bt".into(),
            train_system(SystemKind::MultiUlrMole, &res, cfg.low_pairs, Some(synth), None),
        ));
    } else {
        rows.push(AblationRow {
            system: "multi+ulr+mole+bt".into(),
            bleu: None,
            error: Some("back-translation unavailable".into()),
        });
    }

    let mut csv = format!("# config={} seed={seed}\nsystem,bleu\n", cfg.resolved_json());
    for r in &rows {
        match (r.bleu, &r.error) {
            (Some(b), _) => writeln!(csv, "{},{}", r.system, b).unwrap(),
            (None, Some(e)) => writeln!(csv, "{},FAILED: {}", r.system, e).unwrap(),
            (None, None) => writeln!(csv, "{},FAILED", r.system).unwrap(),
        }
    }
    Ok((rows, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oov_buckets_partition_the_test_set() {
        // A stub model is unnecessary for the partition property; build
        // the bucket assignment directly through the public function by
        // using a trained-free path: we only check bucketing geometry
        // here, so use a tiny vanilla system.
        let cfg = tiny_cfg();
        let res = prepare_cipher(&cfg, 3).unwrap();
        let trained = train_system(SystemKind::Vanilla, &res, cfg.low_pairs, None, Some(2)).unwrap();
        let vocab = res.parallel_source_vocab(&[res.low_train.clone().take(cfg.low_pairs)]);
        let report = unknown_token_report(
            &trained.model,
            &trained.params,
            &res.test,
            &vocab,
            &[0.25, 0.5],
        )
        .unwrap();
        let total: usize = report.iter().map(|b| b.sentences).sum();
        assert_eq!(total, res.test.len());
        assert_eq!(report[0].lo, 0.0);
        for b in &report {
            assert_eq!(b.bleu.is_none(), b.sentences == 0);
        }
    }

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.aux_langs = 2;
        cfg.aux_pairs = 30;
        cfg.low_pairs = 12;
        cfg.dev_size = 10;
        cfg.test_size = 10;
        cfg.pool_sentences = 150;
        cfg.bpe_num_ops = 200;
        cfg.skipgram = SkipgramConfig { dim: 8, window: 2, negatives: 2, epochs: 1, lr: 0.05, seed: 1 };
        cfg.universal_size = 400;
        cfg.model.hidden = 8;
        cfg.model.embed_dim = 8;
        cfg.train.batch_size = 4;
        cfg.train.max_steps = 3;
        cfg.train.dropout = 0.0;
        cfg.seeds = vec![3];
        cfg
    }

    #[test]
    fn resources_prepare_and_systems_build() {
        let cfg = tiny_cfg();
        let res = prepare_cipher(&cfg, 3).unwrap();
        assert_eq!(res.langs.len(), 3);
        assert_eq!(res.aux_train.len(), 2);
        assert!(!res.universal_tokens.is_empty());
        // Every system arm constructs.
        for kind in [
            SystemKind::Vanilla,
            SystemKind::Multi,
            SystemKind::ClosestUniToken,
            SystemKind::MultiUlrFrozenA,
            SystemKind::MultiUlr,
            SystemKind::MultiUlrMole,
        ] {
            let built = build_system(kind, &res, cfg.low_pairs, None).unwrap();
            assert!(!built.corpora.is_empty(), "{}", kind.label());
        }
        // Zero-shot build excludes the low-resource corpus but keeps
        // its lexicon.
        let built = build_system(SystemKind::MultiUlr, &res, 0, None).unwrap();
        assert_eq!(built.corpora.len(), 2);
        assert!(built.model.ulr_lang(res.low_lang()).is_some());
        assert!(build_system(SystemKind::Vanilla, &res, 0, None).is_err());
    }

    #[test]
    fn closest_uni_token_replaces_source_tokens() {
        let cfg = tiny_cfg();
        let res = prepare_cipher(&cfg, 3).unwrap();
        let replaced = closest_uni_token_corpus(
            &res.low_train,
            &res.projected[res.low_index],
            &res.keys,
            &res.universal_tokens,
        )
        .unwrap();
        assert_eq!(replaced.len(), res.low_train.len());
        let uni: HashSet<&String> = res.universal_tokens.iter().collect();
        let mut replaced_count = 0;
        let mut total = 0;
        for (src, _) in &replaced.pairs {
            for t in src {
                total += 1;
                if uni.contains(t) {
                    replaced_count += 1;
                }
            }
        }
        // The low-resource mono corpus covers its vocabulary, so almost
        // every token has a query vector and gets replaced.
        assert!(replaced_count * 10 >= total * 9, "{replaced_count}/{total}");
        // Target sides untouched.
        for ((_, t1), (_, t2)) in replaced.pairs.iter().zip(&res.low_train.pairs) {
            assert_eq!(t1, t2);
        }
    }
}
