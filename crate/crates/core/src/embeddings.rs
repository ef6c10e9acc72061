//! Monolingual word embeddings: text-format ingestion, unit
//! normalization, an in-toolkit skip-gram trainer, and cosine scans.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::parallel::ordered_map;
use crate::rng::Rng;
use crate::tensor::kernels::{dot, l2_norm};
use crate::{Error, Result};

/// Token-aligned dense vectors for one language.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub lang: String,
    pub dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    pub normalized: bool,
    /// Rows that were exactly zero when the table was normalized.
    pub zero_rows: Vec<usize>,
}

impl EmbeddingTable {
    pub fn new(lang: &str, dim: usize) -> Self {
        EmbeddingTable {
            lang: lang.to_string(),
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            normalized: false,
            zero_rows: Vec::new(),
        }
    }

    pub fn push(&mut self, token: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for `{token}` has dim {}, table has {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(token) {
            return Err(Error::Input(format!("duplicate token `{token}`")));
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.row(i))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Unit-normalize every nonzero row; zero rows stay zero and are
    /// recorded in `zero_rows` so downstream mixtures can fall back to
    /// a uniform distribution for them.
    pub fn normalize_rows(mut self) -> Self {
        self.zero_rows.clear();
        for i in 0..self.tokens.len() {
            let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
            let norm = l2_norm(row);
            if norm > 0.0 {
                for x in row {
                    *x /= norm;
                }
            } else {
                self.zero_rows.push(i);
            }
        }
        self.normalized = true;
        self
    }

    /// Top-k tokens by cosine to `query`, descending, ties broken by
    /// token order. Requires a normalized table (it is a brute-force
    /// scan; this guard keeps cosines honest).
    pub fn nearest_neighbors(&self, query: &[f64], k: usize) -> Result<Vec<(String, f64)>> {
        if !self.normalized {
            return Err(Error::State("nearest_neighbors requires a normalized table".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query has dim {}, table has {}",
                query.len(),
                self.dim
            )));
        }
        let qnorm = l2_norm(query);
        let unit: Vec<f64> = if qnorm > 0.0 {
            query.iter().map(|x| x / qnorm).collect()
        } else {
            vec![0.0; self.dim]
        };
        let rows: Vec<usize> = (0..self.len()).collect();
        let mut scored: Vec<(usize, f64)> = ordered_map(&rows, |&i| (i, dot(self.row(i), &unit)));
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored.into_iter().map(|(i, c)| (self.tokens[i].clone(), c)).collect())
    }

    /// Text format: header `<count> <dim>`, then `<token> v1 .. v_dim`.
    /// Values are written with 6 decimal digits.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{} {}", self.len(), self.dim).unwrap();
        for (i, tok) in self.tokens.iter().enumerate() {
            out.push_str(tok);
            for v in self.row(i) {
                write!(out, " {:.6}", v).unwrap();
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, lang: &str, expected_dim: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format_at(1, "missing `<count> <dim>` header"))?;
        let mut parts = header.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format_at(1, "bad count in header"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format_at(1, "bad dim in header"))?;
        if let Some(expected) = expected_dim {
            if dim != expected {
                return Err(Error::Format(format!(
                    "file declares dim {dim}, expected {expected}"
                )));
            }
        }
        let mut table = EmbeddingTable::new(lang, dim);
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap();
            let vector: Vec<f64> = parts
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::format_at(lineno + 1, format!("bad real `{s}`")))
                })
                .collect::<Result<_>>()?;
            if vector.len() != dim {
                return Err(Error::format_at(
                    lineno + 1,
                    format!("expected {dim} values, got {}", vector.len()),
                ));
            }
            table.push(token, &vector).map_err(|e| match e {
                Error::Input(msg) => Error::format_at(lineno + 1, msg),
                other => other,
            })?;
        }
        if table.len() != count {
            return Err(Error::Format(format!(
                "header declares {count} rows, file contains {}",
                table.len()
            )));
        }
        Ok(table)
    }
}

/// Skip-gram with negative sampling hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig { dim: 300, window: 5, negatives: 5, epochs: 5, lr: 0.025, seed: 1 }
    }
}

/// Train skip-gram vectors with negative sampling. Deterministic for a
/// fixed config: sentences, positions and samples are visited in order
/// from one seeded generator.
pub fn train_skipgram(
    lang: &str,
    sentences: &[Vec<String>],
    config: &SkipgramConfig,
) -> Result<EmbeddingTable> {
    if sentences.iter().all(|s| s.is_empty()) {
        return Err(Error::Input("cannot train embeddings on an empty corpus".into()));
    }
    if config.dim < 2 {
        return Err(Error::Param(format!("embedding dim must be >= 2, got {}", config.dim)));
    }

    // Vocabulary in first-appearance order; every token kept (min count 1).
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut vocab: Vec<&str> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for sent in sentences {
        for tok in sent {
            match index.get(tok.as_str()) {
                Some(&i) => counts[i] += 1,
                None => {
                    index.insert(tok, vocab.len());
                    vocab.push(tok);
                    counts.push(1);
                }
            }
        }
    }
    let v = vocab.len();
    let dim = config.dim;

    // Unigram^0.75 cumulative table for negative sampling.
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let mut cumulative = Vec::with_capacity(v);
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let total_weight = acc;

    let mut rng = Rng::seed_from(config.seed);
    let mut input: Vec<f64> = (0..v * dim).map(|_| rng.range(-0.5, 0.5) / dim as f64).collect();
    let mut output: Vec<f64> = vec![0.0; v * dim];

    let positions: usize = sentences.iter().map(Vec::len).sum();
    let total_steps = (config.epochs * positions).max(1);
    let mut processed = 0usize;

    let ids: Vec<Vec<usize>> =
        sentences.iter().map(|s| s.iter().map(|t| index[t.as_str()]).collect()).collect();

    let mut hidden_err = vec![0.0; dim];
    for _epoch in 0..config.epochs {
        for sent in &ids {
            for (i, &center) in sent.iter().enumerate() {
                let alpha =
                    config.lr * (1.0 - processed as f64 / total_steps as f64).max(1e-4);
                processed += 1;
                let b = 1 + rng.below(config.window.max(1));
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(sent.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let context = sent[j];
                    hidden_err.iter_mut().for_each(|x| *x = 0.0);
                    let v_in = input[center * dim..(center + 1) * dim].to_vec();
                    for neg in 0..=config.negatives {
                        let (target, label) = if neg == 0 {
                            (context, 1.0)
                        } else {
                            let r = rng.uniform() * total_weight;
                            let t = cumulative.partition_point(|&c| c <= r).min(v - 1);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let v_out = &mut output[target * dim..(target + 1) * dim];
                        let f = 1.0 / (1.0 + (-dot(&v_in, v_out)).exp());
                        let g = alpha * (label - f);
                        for (e, &o) in hidden_err.iter_mut().zip(v_out.iter()) {
                            *e += g * o;
                        }
                        for (o, &iv) in v_out.iter_mut().zip(&v_in) {
                            *o += g * iv;
                        }
                    }
                    let v_in = &mut input[center * dim..(center + 1) * dim];
                    for (iv, &e) in v_in.iter_mut().zip(&hidden_err) {
                        *iv += e;
                    }
                }
            }
        }
    }

    let mut table = EmbeddingTable::new(lang, dim);
    for (i, tok) in vocab.iter().enumerate() {
        table.push(tok, &input[i * dim..(i + 1) * dim])?;
    }
    Ok(table)
}
