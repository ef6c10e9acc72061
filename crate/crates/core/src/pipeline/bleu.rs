//! Corpus BLEU-4 with brevity penalty (unsmoothed), plus an add-one
//! smoothed sentence-level variant for diagnostics.

use std::collections::HashMap;

use crate::parallel::ordered_map;
use crate::{Error, Result};

const MAX_N: usize = 4;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BleuReport {
    /// Corpus BLEU on the 0-100 scale.
    pub bleu: f64,
    /// Modified n-gram precisions p1..p4.
    pub precisions: [f64; MAX_N],
    pub brevity_penalty: f64,
    pub hyp_tokens: usize,
    pub ref_tokens: usize,
}

#[derive(Default, Clone)]
struct Counts {
    matches: [u64; MAX_N],
    totals: [u64; MAX_N],
    hyp_len: usize,
    ref_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut map: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

fn sentence_counts(hyp: &[String], reference: &[String]) -> Counts {
    let mut c = Counts { hyp_len: hyp.len(), ref_len: reference.len(), ..Default::default() };
    for n in 1..=MAX_N {
        let ref_counts = ngram_counts(reference, n);
        let hyp_counts = ngram_counts(hyp, n);
        for (gram, &count) in &hyp_counts {
            let clip = ref_counts.get(gram).copied().unwrap_or(0);
            c.matches[n - 1] += count.min(clip);
        }
        c.totals[n - 1] += hyp.len().saturating_sub(n - 1) as u64;
    }
    c
}

/// Corpus-level BLEU-4: clipped modified n-gram precision aggregated
/// over all sentence pairs, geometric mean, brevity penalty. Any zero
/// precision makes the score 0 (unsmoothed).
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Input(format!(
            "hypothesis/reference count mismatch: {} vs {}",
            hypotheses.len(),
            references.len()
        )));
    }
    let pairs: Vec<(usize, ())> = (0..hypotheses.len()).map(|i| (i, ())).collect();
    let per_sentence: Vec<Counts> =
        ordered_map(&pairs, |(i, _)| sentence_counts(&hypotheses[*i], &references[*i]));
    let mut total = Counts::default();
    for c in per_sentence {
        for n in 0..MAX_N {
            total.matches[n] += c.matches[n];
            total.totals[n] += c.totals[n];
        }
        total.hyp_len += c.hyp_len;
        total.ref_len += c.ref_len;
    }

    let mut precisions = [0.0; MAX_N];
    for n in 0..MAX_N {
        if total.totals[n] > 0 {
            precisions[n] = total.matches[n] as f64 / total.totals[n] as f64;
        }
    }
    let brevity_penalty = if total.hyp_len == 0 {
        0.0
    } else if total.hyp_len > total.ref_len {
        1.0
    } else {
        (1.0 - total.ref_len as f64 / total.hyp_len as f64).exp()
    };
    let bleu = if precisions.iter().any(|&p| p == 0.0) || total.hyp_len == 0 {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_N as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_tokens: total.hyp_len,
        ref_tokens: total.ref_len,
    })
}

/// Sentence BLEU with add-one smoothing on every p_n (diagnostics).
pub fn sentence_bleu_smoothed(hyp: &[String], reference: &[String]) -> f64 {
    let c = sentence_counts(hyp, reference);
    if c.hyp_len == 0 {
        return 0.0;
    }
    let log_mean = (0..MAX_N)
        .map(|n| ((c.matches[n] + 1) as f64 / (c.totals[n] + 1) as f64).ln())
        .sum::<f64>()
        / MAX_N as f64;
    let bp = if c.hyp_len > c.ref_len {
        1.0
    } else {
        (1.0 - c.ref_len as f64 / c.hyp_len as f64).exp()
    };
    100.0 * bp * log_mean.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn lines(ls: &[&str]) -> Vec<Vec<String>> {
        ls.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn identical_corpora_score_100() {
        let h = lines(&["the cat sat on the mat", "a long sentence with many words here"]);
        let r = h.clone();
        let report = bleu(&h, &r).unwrap();
        assert!((report.bleu - 100.0).abs() < 1e-9);
        assert_eq!(report.brevity_penalty, 1.0);
        for p in report.precisions {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_corpora_score_0() {
        let h = lines(&["aa bb cc dd"]);
        let r = lines(&["xx yy zz ww"]);
        assert_eq!(bleu(&h, &r).unwrap().bleu, 0.0);
    }

    #[test]
    fn clipping_matches_hand_count() {
        // p1 for "the the the the the" vs "the cat sat": clip to 1.
        let h = lines(&["the the the the the"]);
        let r = lines(&["the cat sat"]);
        let report = bleu(&h, &r).unwrap();
        assert!((report.precisions[0] - 0.2).abs() < 1e-12);
        assert_eq!(report.bleu, 0.0); // no bigram overlap
    }

    #[test]
    fn count_mismatch_is_an_input_error() {
        assert!(bleu(&lines(&["a"]), &lines(&["a", "b"])).is_err());
    }

    #[test]
    fn brevity_penalty_below_one_for_short_hypotheses() {
        let h = lines(&["the cat"]);
        let r = lines(&["the cat sat on the mat"]);
        let report = bleu(&h, &r).unwrap();
        assert!((report.brevity_penalty - (1.0f64 - 6.0 / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn smoothed_sentence_bleu_is_positive_on_partial_overlap() {
        let h = tokenize("the cat sat");
        let r = tokenize("the cat slept");
        let s = sentence_bleu_smoothed(&h, &r);
        assert!(s > 0.0 && s < 100.0);
    }

    #[test]
    fn bleu_is_within_unit_interval_scaled() {
        let mut rng = crate::rng::Rng::seed_from(3);
        let vocab = ["a", "b", "c", "d", "e"];
        for _ in 0..30 {
            let mk = |rng: &mut crate::rng::Rng| -> Vec<Vec<String>> {
                (0..4)
                    .map(|_| {
                        (0..3 + rng.below(6)).map(|_| vocab[rng.below(5)].to_string()).collect()
                    })
                    .collect()
            };
            let h = mk(&mut rng);
            let r = mk(&mut rng);
            let report = bleu(&h, &r).unwrap();
            assert!((0.0..=100.0).contains(&report.bleu));
        }
    }
}
