//! Synthetic cipher-family tasks: a template-generated base corpus and
//! per-language deterministic token-substitution ciphers (optionally
//! with local reordering). Relatedness is controllable and auxiliary
//! supervision is unlimited, which is what the transfer, zero-shot and
//! robustness experiments need at desk scale.

use std::collections::{HashMap, HashSet};

use crate::corpus::ParallelCorpus;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CipherTaskConfig {
    /// Number of cipher languages (the last one plays low-resource).
    pub n_langs: usize,
    /// Size of the shared base sentence pool.
    pub sentences: usize,
    pub seed: u64,
    /// Swap adjacent token pairs on the cipher side (offset varies by
    /// language) so sources are not strictly monotone with the target.
    pub reorder: bool,
}

impl Default for CipherTaskConfig {
    fn default() -> Self {
        CipherTaskConfig { n_langs: 4, sentences: 8000, seed: 1, reorder: false }
    }
}

#[derive(Debug, Clone)]
pub struct CipherTask {
    pub base: Vec<Vec<String>>,
    pub langs: Vec<String>,
    maps: Vec<HashMap<String, String>>,
    reorder: bool,
}

const CONSONANTS: &[&str] =
    &["b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut Rng, syllables: usize, taken: &mut HashSet<String>) -> String {
    loop {
        let mut w = String::new();
        for _ in 0..syllables {
            w.push_str(CONSONANTS[rng.below(CONSONANTS.len())]);
            w.push_str(VOWELS[rng.below(VOWELS.len())]);
        }
        if rng.below(3) == 0 {
            w.push_str(CONSONANTS[rng.below(CONSONANTS.len())]);
        }
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

struct BaseGrammar {
    nouns: Vec<String>,
    adjectives: Vec<String>,
    verbs_t: Vec<String>,
    verbs_i: Vec<String>,
}

impl BaseGrammar {
    fn generate(rng: &mut Rng, taken: &mut HashSet<String>) -> Self {
        for w in ["the", "a", "of", "and", "near", "under"] {
            taken.insert(w.to_string());
        }
        // A wide, uniformly used open vocabulary: a small parallel
        // sample then covers only a fraction of the types, which is
        // the extremely-low-resource regime the toolkit targets.
        BaseGrammar {
            nouns: (0..120).map(|_| pseudo_word(rng, 2, taken)).collect(),
            adjectives: (0..30).map(|_| pseudo_word(rng, 2, taken)).collect(),
            verbs_t: (0..20).map(|_| pseudo_word(rng, 3, taken)).collect(),
            verbs_i: (0..20).map(|_| pseudo_word(rng, 3, taken)).collect(),
        }
    }

    fn sentence(&self, rng: &mut Rng) -> Vec<String> {
        let n = |rng: &mut Rng| self.nouns[rng.below(self.nouns.len())].clone();
        let adj = |rng: &mut Rng| self.adjectives[rng.below(self.adjectives.len())].clone();
        let vt = |rng: &mut Rng| self.verbs_t[rng.below(self.verbs_t.len())].clone();
        let vi = |rng: &mut Rng| self.verbs_i[rng.below(self.verbs_i.len())].clone();
        let s = |w: &str| w.to_string();
        match rng.below(8) {
            0 => vec![s("the"), n(rng), vt(rng), s("the"), n(rng)],
            1 => vec![s("the"), adj(rng), n(rng), vt(rng), s("a"), n(rng)],
            2 => vec![s("a"), n(rng), s("of"), s("the"), n(rng), vi(rng)],
            3 => vec![s("the"), n(rng), vi(rng), s("near"), s("the"), n(rng)],
            4 => vec![s("the"), n(rng), s("and"), s("the"), n(rng), vi(rng)],
            5 => vec![s("a"), adj(rng), n(rng), vt(rng), s("the"), adj(rng), n(rng)],
            6 => vec![s("the"), n(rng), vt(rng), s("the"), n(rng), s("of"), s("the"), n(rng)],
            _ => vec![s("the"), adj(rng), n(rng), s("under"), s("the"), n(rng), vi(rng)],
        }
    }

    fn vocabulary(&self) -> Vec<String> {
        let mut v: Vec<String> =
            ["the", "a", "of", "and", "near", "under"].iter().map(|s| s.to_string()).collect();
        v.extend(self.nouns.iter().cloned());
        v.extend(self.adjectives.iter().cloned());
        v.extend(self.verbs_t.iter().cloned());
        v.extend(self.verbs_i.iter().cloned());
        v
    }
}

impl CipherTask {
    pub fn generate(cfg: &CipherTaskConfig) -> Result<Self> {
        if cfg.n_langs == 0 {
            return Err(Error::Param("cipher task needs at least one language".into()));
        }
        let mut rng = Rng::seed_stream(cfg.seed, 0xC1F);
        let mut taken = HashSet::new();
        let grammar = BaseGrammar::generate(&mut rng, &mut taken);
        let base: Vec<Vec<String>> =
            (0..cfg.sentences).map(|_| grammar.sentence(&mut rng)).collect();

        let vocab = grammar.vocabulary();
        let mut maps = Vec::with_capacity(cfg.n_langs);
        for li in 0..cfg.n_langs {
            let mut lang_rng = Rng::seed_stream(cfg.seed, 0xC1F + 1 + li as u64);
            let map: HashMap<String, String> = vocab
                .iter()
                .map(|w| (w.clone(), pseudo_word(&mut lang_rng, 2 + li % 2, &mut taken)))
                .collect();
            maps.push(map);
        }
        Ok(CipherTask {
            base,
            langs: (0..cfg.n_langs).map(|i| format!("c{i}")).collect(),
            maps,
            reorder: cfg.reorder,
        })
    }

    /// Substitute every token; optionally swap adjacent pairs with a
    /// language-dependent offset.
    pub fn encipher(&self, lang_index: usize, sentence: &[String]) -> Vec<String> {
        let map = &self.maps[lang_index];
        let mut out: Vec<String> =
            sentence.iter().map(|t| map.get(t).cloned().unwrap_or_else(|| t.clone())).collect();
        if self.reorder {
            let mut i = lang_index % 2;
            while i + 1 < out.len() {
                out.swap(i, i + 1);
                i += 2;
            }
        }
        out
    }

    /// The substitution dictionary of one language.
    pub fn dictionary(&self, lang_index: usize) -> &HashMap<String, String> {
        &self.maps[lang_index]
    }

    /// `(cipher(s), s)` pairs over a slice of the base pool.
    pub fn parallel_slice(&self, lang_index: usize, range: std::ops::Range<usize>) -> ParallelCorpus {
        let pairs = self.base[range]
            .iter()
            .map(|s| (self.encipher(lang_index, s), s.clone()))
            .collect();
        ParallelCorpus::new(&self.langs[lang_index], pairs)
    }

    /// The whole pool enciphered: stands in for a large monolingual
    /// corpus in this language.
    pub fn monolingual(&self, lang_index: usize) -> Vec<Vec<String>> {
        self.base.iter().map(|s| self.encipher(lang_index, s)).collect()
    }

    pub fn monolingual_target(&self) -> &[Vec<String>] {
        &self.base
    }
}

/// The standard split layout: disjoint base slices for each auxiliary
/// language, the low-resource training set, dev, and test. The last
/// language is the low-resource one; dev/test are in that language.
#[derive(Debug, Clone)]
pub struct CipherSplits {
    pub aux_train: Vec<ParallelCorpus>,
    pub low_train: ParallelCorpus,
    pub low_index: usize,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

pub fn standard_splits(
    task: &CipherTask,
    aux_pairs: usize,
    low_pairs: usize,
    dev_size: usize,
    test_size: usize,
) -> Result<CipherSplits> {
    let n_aux = task.langs.len() - 1;
    let needed = n_aux * aux_pairs + low_pairs + dev_size + test_size;
    if task.base.len() < needed {
        return Err(Error::Param(format!(
            "base pool has {} sentences, splits need {needed}",
            task.base.len()
        )));
    }
    let low_index = n_aux;
    let mut cursor = 0;
    let mut aux_train = Vec::with_capacity(n_aux);
    for k in 0..n_aux {
        aux_train.push(task.parallel_slice(k, cursor..cursor + aux_pairs));
        cursor += aux_pairs;
    }
    let low_train = task.parallel_slice(low_index, cursor..cursor + low_pairs);
    cursor += low_pairs;
    let dev = task.parallel_slice(low_index, cursor..cursor + dev_size);
    cursor += dev_size;
    let test = task.parallel_slice(low_index, cursor..cursor + test_size);
    Ok(CipherSplits { aux_train, low_train, low_index, dev, test })
}
