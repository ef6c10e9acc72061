//! Data ingestion: subword segmentation, vocabularies with language
//! markers, parallel corpora, and mixed multilingual batching.

pub mod batching;
pub mod bpe;
pub mod vocab;

pub use batching::{make_batches, Batch, BatchIndexer, BatchStream, PaddedSide, Schedule};
pub use bpe::{learn_bpe, BpeModel, END_OF_WORD};
pub use vocab::{build_multilingual_vocab, Vocabulary, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

use std::path::Path;

use crate::{Error, Result};

/// Default sentence-length cap, in subword symbols per side.
pub const DEFAULT_MAX_LEN: usize = 50;

/// Aligned sentence pairs for one source language.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ParallelCorpus {
    pub lang: String,
    pub pairs: Vec<(Vec<String>, Vec<String>)>,
    /// True for corpora produced by back-translation.
    pub synthetic: bool,
}

impl ParallelCorpus {
    pub fn new(lang: &str, pairs: Vec<(Vec<String>, Vec<String>)>) -> Self {
        ParallelCorpus { lang: lang.to_string(), pairs, synthetic: false }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Whitespace-tokenize two aligned one-sentence-per-line files.
    pub fn from_files(lang: &str, src_path: &Path, tgt_path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(src_path)?;
        let tgt = std::fs::read_to_string(tgt_path)?;
        let src_lines: Vec<&str> = src.lines().collect();
        let tgt_lines: Vec<&str> = tgt.lines().collect();
        if src_lines.len() != tgt_lines.len() {
            return Err(Error::Input(format!(
                "aligned files differ in length: {} vs {} lines",
                src_lines.len(),
                tgt_lines.len()
            )));
        }
        let pairs = src_lines
            .iter()
            .zip(&tgt_lines)
            .map(|(s, t)| (tokenize(s), tokenize(t)))
            .collect();
        Ok(Self::new(lang, pairs))
    }

    /// One pair per line: `source<TAB>target`.
    pub fn from_tsv(lang: &str, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (s, t) = line
                .split_once('\t')
                .ok_or_else(|| Error::format_at(i + 1, "expected `source<TAB>target`"))?;
            pairs.push((tokenize(s), tokenize(t)));
        }
        Ok(Self::new(lang, pairs))
    }

    /// Drop pairs where either side is empty or exceeds `max_len` symbols.
    /// The length cap applies to both sides.
    pub fn filter_len(mut self, max_len: usize) -> Self {
        self.pairs.retain(|(s, t)| {
            !s.is_empty() && !t.is_empty() && s.len() <= max_len && t.len() <= max_len
        });
        self
    }

    /// Keep the first `n` pairs (corpus-size sweeps).
    pub fn take(mut self, n: usize) -> Self {
        self.pairs.truncate(n);
        self
    }

    /// Re-segment both sides with learned subword models.
    pub fn apply_bpe(mut self, src_bpe: &BpeModel, tgt_bpe: &BpeModel) -> Self {
        for (s, t) in &mut self.pairs {
            *s = src_bpe.apply(s);
            *t = tgt_bpe.apply(t);
        }
        self
    }
}

/// Whitespace pre-tokenization. Case is preserved.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

/// Read a one-sentence-per-line monolingual file into token sequences.
pub fn load_monolingual(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(tokenize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_drops_long_and_empty_pairs() {
        let pairs = vec![
            (tokenize("a b c"), tokenize("x y")),
            (tokenize("a b c d e f"), tokenize("x")),
            (vec![], tokenize("x")),
        ];
        let c = ParallelCorpus::new("xx", pairs).filter_len(5);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn tsv_roundtrip() {
        let dir = std::env::temp_dir().join("uninmt_corpus_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("pairs.tsv");
        std::fs::write(&path, "la casa\tthe house\nel gato\tthe cat\n").unwrap();
        let c = ParallelCorpus::from_tsv("es", &path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs[1].0, tokenize("el gato"));
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn tsv_without_tab_is_a_format_error() {
        let dir = std::env::temp_dir().join("uninmt_corpus_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.tsv");
        std::fs::write(&path, "no tab here\n").unwrap();
        let err = ParallelCorpus::from_tsv("es", &path).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let _ = std::fs::remove_file(&path);
    }
}
