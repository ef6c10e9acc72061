//! Experiment configuration: every hyperparameter nameable through a
//! flat `key = value` file (sections by dotted prefix, `#` comments,
//! unknown keys rejected).

use std::path::Path;

use crate::corpus::batching::Schedule;
use crate::embeddings::SkipgramConfig;
use crate::nmt::{AttentionKind, ModelConfig, TrainingConfig};
use crate::ulr::UlrConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub out_dir: String,
    /// Paired-run seeds; comparative claims use the same seeds across
    /// systems.
    pub seeds: Vec<u64>,

    // Data: either the synthetic cipher family or file-backed corpora.
    pub task: TaskKind,
    pub aux_langs: usize,
    pub aux_pairs: usize,
    pub low_pairs: usize,
    pub dev_size: usize,
    pub test_size: usize,
    pub pool_sentences: usize,
    pub reorder: bool,
    /// `files` task: `(lang, path)` parallel TSVs, the low-resource
    /// language last.
    pub pair_paths: Vec<(String, String)>,
    pub mono_paths: Vec<(String, String)>,
    pub dev_path: Option<String>,
    pub test_path: Option<String>,
    pub low_resource_lang: Option<String>,

    pub bpe_num_ops: usize,
    pub max_sentence_len: usize,

    pub skipgram: SkipgramConfig,

    pub seed_min_count: u64,
    pub max_seeds: usize,

    pub ulr: UlrConfig,
    /// Universal token set size M.
    pub universal_size: usize,

    pub model: ModelConfig,
    pub train: TrainingConfig,

    pub beam: usize,
    pub max_decode_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TaskKind {
    Cipher,
    Files,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            out_dir: "out".into(),
            seeds: vec![1, 2, 3],
            task: TaskKind::Cipher,
            aux_langs: 3,
            aux_pairs: 2000,
            low_pairs: 100,
            dev_size: 200,
            test_size: 200,
            pool_sentences: 8000,
            reorder: false,
            pair_paths: Vec::new(),
            mono_paths: Vec::new(),
            dev_path: None,
            test_path: None,
            low_resource_lang: None,
            bpe_num_ops: 4000,
            max_sentence_len: crate::corpus::DEFAULT_MAX_LEN,
            skipgram: SkipgramConfig::default(),
            seed_min_count: 1,
            max_seeds: 500,
            ulr: UlrConfig::default(),
            universal_size: 4000,
            model: ModelConfig::default(),
            train: TrainingConfig::default(),
            beam: 1,
            max_decode_len: 64,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for key `{key}`")))
}

impl ExperimentConfig {
    /// Apply one `key = value` assignment. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "name" => self.name = value.to_string(),
            "out_dir" => self.out_dir = value.to_string(),
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse::<u64>(key, s.trim()))
                    .collect::<Result<_>>()?;
                if self.seeds.is_empty() {
                    return Err(Error::Config("seeds list is empty".into()));
                }
            }
            "data.task" => {
                self.task = match value {
                    "cipher" => TaskKind::Cipher,
                    "files" => TaskKind::Files,
                    _ => return Err(Error::Config(format!("unknown task `{value}`"))),
                }
            }
            "data.aux_langs" => self.aux_langs = parse(key, value)?,
            "data.aux_pairs" => self.aux_pairs = parse(key, value)?,
            "data.low_pairs" => self.low_pairs = parse(key, value)?,
            "data.dev_size" => self.dev_size = parse(key, value)?,
            "data.test_size" => self.test_size = parse(key, value)?,
            "data.pool" => self.pool_sentences = parse(key, value)?,
            "data.reorder" => self.reorder = parse(key, value)?,
            "data.dev" => self.dev_path = Some(value.to_string()),
            "data.test" => self.test_path = Some(value.to_string()),
            "data.low_resource" => self.low_resource_lang = Some(value.to_string()),
            "data.max_len" => self.max_sentence_len = parse(key, value)?,
            k if k.starts_with("data.pair.") => {
                let lang = k.trim_start_matches("data.pair.").to_string();
                self.pair_paths.retain(|(l, _)| l != &lang);
                self.pair_paths.push((lang, value.to_string()));
            }
            k if k.starts_with("data.mono.") => {
                let lang = k.trim_start_matches("data.mono.").to_string();
                self.mono_paths.retain(|(l, _)| l != &lang);
                self.mono_paths.push((lang, value.to_string()));
            }
            "bpe.num_ops" => self.bpe_num_ops = parse(key, value)?,
            "skipgram.dim" => self.skipgram.dim = parse(key, value)?,
            "skipgram.window" => self.skipgram.window = parse(key, value)?,
            "skipgram.negatives" => self.skipgram.negatives = parse(key, value)?,
            "skipgram.epochs" => self.skipgram.epochs = parse(key, value)?,
            "skipgram.lr" => self.skipgram.lr = parse(key, value)?,
            "projection.min_count" => self.seed_min_count = parse(key, value)?,
            "projection.max_seeds" => self.max_seeds = parse(key, value)?,
            "ulr.tau" => {
                self.ulr.tau = parse(key, value)?;
                if self.ulr.tau <= 0.0 {
                    return Err(Error::Config("ulr.tau must be positive".into()));
                }
            }
            "ulr.top_frequent_k" => self.ulr.top_frequent_k = parse(key, value)?,
            "ulr.top_n_universal" => {
                self.ulr.top_n_universal =
                    if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "ulr.universal_size" => self.universal_size = parse(key, value)?,
            "model.hidden" => self.model.hidden = parse(key, value)?,
            "model.embed_dim" => self.model.embed_dim = parse(key, value)?,
            "model.attention" => {
                self.model.attention = match value {
                    "additive" => AttentionKind::Additive,
                    "bilinear" => AttentionKind::Bilinear,
                    _ => return Err(Error::Config(format!("unknown attention `{value}`"))),
                }
            }
            "model.init_scale" => self.model.init_scale = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.max_steps" => self.train.max_steps = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "train.dropout" => self.train.dropout = parse(key, value)?,
            "train.lambda_gate" => self.train.lambda_gate = parse(key, value)?,
            "train.chunk_size" => self.train.chunk_size = parse(key, value)?,
            "train.eval_every" => self.train.eval_every = parse(key, value)?,
            "train.clip_norm" => {
                self.train.clip_norm =
                    if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "train.schedule" => {
                self.train.schedule = match value {
                    "uniform" => Schedule::Uniform,
                    "proportional" => Schedule::Proportional,
                    _ => return Err(Error::Config(format!("unknown schedule `{value}`"))),
                }
            }
            "decode.beam" => self.beam = parse(key, value)?,
            "decode.max_len" => self.max_decode_len = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::format_at(i + 1, "expected `key = value`"))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// The fully resolved configuration as JSON, embedded into every
    /// experiment artifact next to its seed.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
