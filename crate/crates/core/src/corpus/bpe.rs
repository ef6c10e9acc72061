//! Byte-pair encoding: greedy most-frequent-pair merges over word types.

use std::collections::HashMap;
use std::path::Path;

use crate::parallel::ordered_map;
use crate::{Error, Result};

/// End-of-word marker, kept as its own initial symbol so merges can
/// absorb it and detokenization stays lossless.
pub const END_OF_WORD: &str = "</w>";

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BpeModel {
    /// Merge rules in learned order.
    pub merges: Vec<(String, String)>,
    /// The merge budget the model was learned with (`merges.len()` may
    /// be smaller if the corpus ran out of repeated pairs).
    pub num_ops: usize,
}

/// Learn `num_ops` merges from tokenized sentences.
///
/// Pair counting is over word types weighted by frequency. The best
/// pair is the most frequent one, ties broken by lexicographic order of
/// `(left, right)`, so learning is deterministic. Learning stops early
/// when no pair occurs at least twice.
pub fn learn_bpe(sentences: &[Vec<String>], num_ops: usize) -> Result<BpeModel> {
    let mut word_counts: HashMap<&str, u64> = HashMap::new();
    for sent in sentences {
        for tok in sent {
            *word_counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::Input("cannot learn BPE from an empty corpus".into()));
    }

    let mut words: Vec<(Vec<String>, u64)> = {
        let mut v: Vec<(&str, u64)> = word_counts.into_iter().collect();
        v.sort_unstable_by(|a, b| a.0.cmp(b.0));
        v.into_iter().map(|(w, c)| (split_word(w), c)).collect()
    };

    let mut merges = Vec::new();
    for _ in 0..num_ops {
        let mut pair_counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (symbols, count) in &words {
            for window in symbols.windows(2) {
                *pair_counts.entry((window[0].as_str(), window[1].as_str())).or_insert(0) += count;
            }
        }
        // Max count, lexicographically smallest pair on ties; this
        // selection is independent of map iteration order.
        let mut best: Option<((&str, &str), u64)> = None;
        for (pair, count) in &pair_counts {
            let better = match &best {
                None => true,
                Some((bp, bc)) => count > bc || (count == bc && pair < bp),
            };
            if better {
                best = Some((*pair, *count));
            }
        }
        let Some(((left, right), count)) = best else { break };
        if count < 2 {
            break;
        }
        let merge = (left.to_string(), right.to_string());
        for (symbols, _) in &mut words {
            merge_pair(symbols, &merge.0, &merge.1);
        }
        merges.push(merge);
    }

    Ok(BpeModel { merges, num_ops })
}

/// Split a word into character symbols plus the end-of-word marker.
fn split_word(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    symbols.push(END_OF_WORD.to_string());
    symbols
}

/// Merge all non-overlapping `(left, right)` occurrences, left to right.
fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let merged = format!("{}{}", symbols[i], symbols[i + 1]);
            symbols[i] = merged;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

impl BpeModel {
    /// Segment one word by replaying the merges in learned order.
    /// Words with unseen characters simply keep them as single symbols.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = split_word(word);
        for (left, right) in &self.merges {
            if symbols.len() < 2 {
                break;
            }
            merge_pair(&mut symbols, left, right);
        }
        symbols
    }

    /// Apply to a tokenized sentence.
    pub fn apply(&self, tokens: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        for tok in tokens {
            out.extend(self.segment_word(tok));
        }
        out
    }

    /// Apply to a whole corpus. Distinct words are segmented once, in
    /// parallel when the `parallel` feature is on.
    pub fn apply_corpus(&self, sentences: &[Vec<String>]) -> Vec<Vec<String>> {
        let mut uniq: Vec<&str> = sentences.iter().flatten().map(String::as_str).collect();
        uniq.sort_unstable();
        uniq.dedup();
        let segmented = ordered_map(&uniq, |w| self.segment_word(w));
        let table: HashMap<&str, &Vec<String>> = uniq.iter().copied().zip(&segmented).collect();
        sentences
            .iter()
            .map(|sent| sent.iter().flat_map(|t| table[t.as_str()].iter().cloned()).collect())
            .collect()
    }

    /// Sequential reference for the bench comparison.
    pub fn apply_corpus_seq(&self, sentences: &[Vec<String>]) -> Vec<Vec<String>> {
        sentences.iter().map(|s| self.apply(s)).collect()
    }

    /// Rejoin subwords into words, honoring the end-of-word marker.
    pub fn detokenize(subwords: &[String]) -> Vec<String> {
        let mut words = Vec::new();
        let mut current = String::new();
        for sym in subwords {
            if let Some(stem) = sym.strip_suffix(END_OF_WORD) {
                current.push_str(stem);
                words.push(std::mem::take(&mut current));
            } else {
                current.push_str(sym);
            }
        }
        if !current.is_empty() {
            words.push(current);
        }
        words
    }

    /// One merge per line, `left right`, applied top to bottom.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(l);
            out.push(' ');
            out.push_str(r);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| Error::format_at(i + 1, "expected `left right`"))?;
            if r.contains(' ') {
                return Err(Error::format_at(i + 1, "expected exactly two symbols"));
            }
            merges.push((l.to_string(), r.to_string()));
        }
        let num_ops = merges.len();
        Ok(BpeModel { merges, num_ops })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    /// Brute-force oracle: re-counts pairs from scratch each round with
    /// a fully sorted scan instead of a map lookup.
    fn oracle_first_merge(sentences: &[Vec<String>]) -> Option<(String, String)> {
        let mut words: Vec<Vec<String>> = Vec::new();
        for s in sentences {
            for w in s {
                words.push(split_word(w));
            }
        }
        let mut counts: Vec<((String, String), u64)> = Vec::new();
        for w in &words {
            for win in w.windows(2) {
                let key = (win[0].clone(), win[1].clone());
                match counts.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, c)) => *c += 1,
                    None => counts.push((key, 1)),
                }
            }
        }
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        counts.into_iter().next().map(|(p, _)| p)
    }

    #[test]
    fn zero_ops_splits_to_characters() {
        let model = learn_bpe(&corpus(&["abc ab"]), 0).unwrap();
        assert!(model.merges.is_empty());
        assert_eq!(model.apply(&tokenize("abc")), vec!["a", "b", "c", END_OF_WORD]);
    }

    #[test]
    fn first_merge_matches_pair_counting_oracle() {
        let sents = corpus(&["aaab aaab ab"]);
        let model = learn_bpe(&sents, 1).unwrap();
        assert_eq!(model.merges[0], ("a".to_string(), "a".to_string()));
        assert_eq!(model.merges[0], oracle_first_merge(&sents).unwrap());
    }

    #[test]
    fn learning_is_deterministic() {
        let sents = corpus(&["the cat sat on the mat", "the bat sat on a hat", "cats bats"]);
        let a = learn_bpe(&sents, 20).unwrap();
        let b = learn_bpe(&sents, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(learn_bpe(&[], 5), Err(Error::Input(_))));
    }

    #[test]
    fn training_word_segments_like_training() {
        // Replaying merges must reproduce the end-of-training state.
        let sents = corpus(&["banana bandana banana ana", "nab ban anna banana"]);
        let model = learn_bpe(&sents, 10).unwrap();
        // Recompute end-of-training segmentations directly.
        let mut words: Vec<(Vec<String>, &str)> = ["banana", "bandana", "ana", "nab", "ban", "anna"]
            .iter()
            .map(|w| (split_word(w), *w))
            .collect();
        for (l, r) in &model.merges {
            for (sym, _) in &mut words {
                merge_pair(sym, l, r);
            }
        }
        for (expected, w) in &words {
            assert_eq!(&model.segment_word(w), expected, "word {w}");
        }
    }

    #[test]
    fn apply_then_detokenize_roundtrips() {
        let sents = corpus(&["flying fish fly high", "high fliers fish"]);
        let model = learn_bpe(&sents, 15).unwrap();
        let sentence = tokenize("fish fly high in high places");
        let segmented = model.apply(&sentence);
        assert_eq!(BpeModel::detokenize(&segmented), sentence);
    }

    #[test]
    fn unseen_characters_stay_character_split() {
        let model = learn_bpe(&corpus(&["aaaa aaaa"]), 3).unwrap();
        let seg = model.segment_word("xyz");
        assert_eq!(seg, vec!["x", "y", "z", END_OF_WORD]);
    }

    #[test]
    fn file_roundtrip_preserves_order() {
        let sents = corpus(&["roundtrip roundtrip rounds trip trip"]);
        let model = learn_bpe(&sents, 8).unwrap();
        let dir = std::env::temp_dir().join("uninmt_bpe_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("merges.txt");
        model.save(&path).unwrap();
        let loaded = BpeModel::load(&path).unwrap();
        assert_eq!(loaded.merges, model.merges);
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn corpus_apply_matches_sequential() {
        let sents = corpus(&["some words repeat words", "repeat some more words"]);
        let model = learn_bpe(&sents, 12).unwrap();
        assert_eq!(model.apply_corpus(&sents), model.apply_corpus_seq(&sents));
    }
}
