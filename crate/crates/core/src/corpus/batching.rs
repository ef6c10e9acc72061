//! Mixed multilingual batching: one language per batch, language chosen
//! per batch by a sampling schedule, sentences shuffled per local epoch.

use super::vocab::PAD_ID;
use super::ParallelCorpus;
use crate::rng::Rng;
use crate::{Error, Result};

/// Maps tokens to ids for the active embedding path. The model
/// implements this; tests use simple vocabulary-backed stubs.
pub trait BatchIndexer: Sync {
    fn source_id(&self, lang: &str, token: &str) -> u32;
    fn target_id(&self, token: &str) -> u32;
}

/// Per-batch language sampling policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Schedule {
    /// Every language equally likely — low-resource pairs oversampled.
    Uniform,
    /// Languages weighted by corpus size.
    Proportional,
}

/// One padded side of a batch: row-major id matrix plus true lengths.
/// Padding cells hold `PAD_ID` and never reach the loss.
#[derive(Debug, Clone)]
pub struct PaddedSide {
    pub ids: Vec<u32>,
    pub width: usize,
    pub lens: Vec<usize>,
}

impl PaddedSide {
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Self {
        Self::from_rows_with_width(rows, 0)
    }

    /// Pad to at least `min_width` columns (tests widen padding with this).
    pub fn from_rows_with_width(rows: Vec<Vec<u32>>, min_width: usize) -> Self {
        let width = rows.iter().map(Vec::len).max().unwrap_or(0).max(min_width);
        let lens: Vec<usize> = rows.iter().map(Vec::len).collect();
        let mut ids = vec![PAD_ID; rows.len() * width];
        for (i, row) in rows.iter().enumerate() {
            ids[i * width..i * width + row.len()].copy_from_slice(row);
        }
        PaddedSide { ids, width, lens }
    }

    pub fn rows(&self) -> usize {
        self.lens.len()
    }

    /// The unpadded tokens of row `i`.
    pub fn tokens(&self, i: usize) -> &[u32] {
        &self.ids[i * self.width..i * self.width + self.lens[i]]
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub lang: String,
    pub src: PaddedSide,
    pub tgt: PaddedSide,
    pub is_low_resource: bool,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.src.rows()
    }

    /// Cheap content hash for diagnostics on aborted steps.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x100000001b3);
        };
        for &id in self.src.ids.iter().chain(self.tgt.ids.iter()) {
            eat(id as u64);
        }
        eat(self.src.width as u64);
        h
    }
}

struct LangCursor {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
}

/// Infinite stream of monolingual-pair batches over mixed corpora.
pub struct BatchStream<'a> {
    corpora: &'a [ParallelCorpus],
    indexer: &'a dyn BatchIndexer,
    batch_size: usize,
    schedule: Schedule,
    low_resource: Vec<String>,
    seed: u64,
    pick_rng: Rng,
    cursors: Vec<LangCursor>,
    sizes: Vec<usize>,
    total: usize,
}

pub fn make_batches<'a>(
    corpora: &'a [ParallelCorpus],
    batch_size: usize,
    schedule: Schedule,
    seed: u64,
    indexer: &'a dyn BatchIndexer,
    low_resource: &[String],
) -> Result<BatchStream<'a>> {
    if batch_size == 0 {
        return Err(Error::Param("batch_size must be >= 1".into()));
    }
    if corpora.is_empty() {
        return Err(Error::Input("no corpora to batch".into()));
    }
    if let Some(c) = corpora.iter().find(|c| c.is_empty()) {
        return Err(Error::Input(format!("corpus for `{}` is empty", c.lang)));
    }
    let cursors = corpora
        .iter()
        .enumerate()
        .map(|(li, c)| {
            let mut order: Vec<usize> = (0..c.len()).collect();
            Rng::seed_stream(seed, stream_id(li, 0)).shuffle(&mut order);
            LangCursor { order, pos: 0, epoch: 0 }
        })
        .collect();
    let sizes: Vec<usize> = corpora.iter().map(|c| c.len()).collect();
    Ok(BatchStream {
        corpora,
        indexer,
        batch_size,
        schedule,
        low_resource: low_resource.to_vec(),
        seed,
        pick_rng: Rng::seed_stream(seed, u64::MAX),
        total: sizes.iter().sum(),
        cursors,
        sizes,
    })
}

fn stream_id(lang_index: usize, epoch: u64) -> u64 {
    (lang_index as u64) ^ (epoch << 20)
}

impl BatchStream<'_> {
    fn pick_language(&mut self) -> usize {
        match self.schedule {
            Schedule::Uniform => self.pick_rng.below(self.corpora.len()),
            Schedule::Proportional => {
                let mut r = self.pick_rng.below(self.total);
                for (i, &s) in self.sizes.iter().enumerate() {
                    if r < s {
                        return i;
                    }
                    r -= s;
                }
                unreachable!()
            }
        }
    }

    /// Completed local epochs for one language.
    pub fn epoch(&self, lang_index: usize) -> u64 {
        self.cursors[lang_index].epoch
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let li = self.pick_language();
        let corpus = &self.corpora[li];
        let cursor = &mut self.cursors[li];
        // Take at most one epoch's remainder so every pair appears
        // exactly once per local epoch.
        let take = self.batch_size.min(cursor.order.len() - cursor.pos);
        let picked: Vec<usize> = cursor.order[cursor.pos..cursor.pos + take].to_vec();
        cursor.pos += take;
        if cursor.pos == cursor.order.len() {
            cursor.epoch += 1;
            cursor.pos = 0;
            Rng::seed_stream(self.seed, stream_id(li, cursor.epoch)).shuffle(&mut cursor.order);
        }

        let mut src_rows = Vec::with_capacity(picked.len());
        let mut tgt_rows = Vec::with_capacity(picked.len());
        for &pi in &picked {
            let (s, t) = &corpus.pairs[pi];
            src_rows.push(s.iter().map(|tok| self.indexer.source_id(&corpus.lang, tok)).collect());
            tgt_rows.push(t.iter().map(|tok| self.indexer.target_id(tok)).collect());
        }
        Some(Batch {
            lang: corpus.lang.clone(),
            src: PaddedSide::from_rows(src_rows),
            tgt: PaddedSide::from_rows(tgt_rows),
            is_low_resource: self.low_resource.iter().any(|l| l == &corpus.lang),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::corpus::vocab::Vocabulary;

    struct StubIndexer {
        vocab: Vocabulary,
    }

    impl StubIndexer {
        fn over(corpora: &[ParallelCorpus]) -> Self {
            let mut vocab = Vocabulary::new();
            for c in corpora {
                for (s, t) in &c.pairs {
                    for tok in s.iter().chain(t) {
                        vocab.add(tok);
                    }
                }
            }
            StubIndexer { vocab }
        }
    }

    impl BatchIndexer for StubIndexer {
        fn source_id(&self, _lang: &str, token: &str) -> u32 {
            self.vocab.id_or_unk(token)
        }
        fn target_id(&self, token: &str) -> u32 {
            self.vocab.id_or_unk(token)
        }
    }

    fn toy_corpus(lang: &str, n: usize) -> ParallelCorpus {
        let pairs = (0..n)
            .map(|i| (tokenize(&format!("s{i} x")), tokenize(&format!("t{i} y"))))
            .collect();
        ParallelCorpus::new(lang, pairs)
    }

    #[test]
    fn single_language_covers_each_pair_once_per_epoch() {
        let corpora = vec![toy_corpus("aa", 10)];
        let idx = StubIndexer::over(&corpora);
        let mut stream = make_batches(&corpora, 3, Schedule::Uniform, 7, &idx, &[]).unwrap();
        let mut seen = Vec::new();
        // One epoch = ceil(10/3) = 4 batches with sizes 3,3,3,1.
        let mut sizes = Vec::new();
        while stream.epoch(0) == 0 {
            let b = stream.next().unwrap();
            sizes.push(b.size());
            for i in 0..b.size() {
                seen.push(b.src.tokens(i)[0]);
            }
        }
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn uniform_schedule_balances_languages() {
        let corpora = vec![toy_corpus("big", 200), toy_corpus("small", 10)];
        let idx = StubIndexer::over(&corpora);
        let stream = make_batches(&corpora, 4, Schedule::Uniform, 3, &idx, &[]).unwrap();
        let mut counts = [0usize; 2];
        for b in stream.take(10_000) {
            counts[if b.lang == "big" { 0 } else { 1 }] += 1;
        }
        // Binomial(10k, 0.5): 3 sigma = 150.
        assert!((counts[0] as i64 - 5000).abs() < 150, "counts: {counts:?}");
    }

    #[test]
    fn fixed_seed_reproduces_the_stream() {
        let corpora = vec![toy_corpus("aa", 17), toy_corpus("bb", 23)];
        let idx = StubIndexer::over(&corpora);
        let collect = || {
            make_batches(&corpora, 5, Schedule::Uniform, 99, &idx, &["bb".into()])
                .unwrap()
                .take(50)
                .map(|b| (b.lang.clone(), b.src.ids.clone(), b.is_low_resource))
                .collect::<Vec<_>>()
        };
        assert_eq!(collect(), collect());
    }

    #[test]
    fn low_resource_flag_follows_language() {
        let corpora = vec![toy_corpus("hi", 5), toy_corpus("lo", 5)];
        let idx = StubIndexer::over(&corpora);
        let stream = make_batches(&corpora, 2, Schedule::Uniform, 1, &idx, &["lo".into()]).unwrap();
        for b in stream.take(40) {
            assert_eq!(b.is_low_resource, b.lang == "lo");
        }
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let idx = StubIndexer { vocab: Vocabulary::new() };
        assert!(make_batches(&[], 4, Schedule::Uniform, 0, &idx, &[]).is_err());
        let corpora = vec![toy_corpus("aa", 3)];
        assert!(make_batches(&corpora, 0, Schedule::Uniform, 0, &idx, &[]).is_err());
    }

    #[test]
    fn padding_is_pad_id_beyond_lengths() {
        let side = PaddedSide::from_rows(vec![vec![5, 6, 7], vec![8]]);
        assert_eq!(side.width, 3);
        assert_eq!(side.tokens(1), &[8]);
        assert_eq!(side.ids[4], PAD_ID);
        assert_eq!(side.ids[5], PAD_ID);
    }
}
