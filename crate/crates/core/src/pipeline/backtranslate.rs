//! Synthetic parallel data from a reverse-direction model.

use crate::corpus::ParallelCorpus;
use crate::nmt::{DecodeMode, TranslationModel};
use crate::parallel::ordered_map;
use crate::tensor::ParamSet;
use crate::{Error, Result};

/// Translate monolingual target-side sentences with a trained
/// reverse-direction model (target → source, greedy) and pair each
/// synthetic source with its original sentence. The result is tagged
/// synthetic and mixable into forward training.
///
/// `reverse_src_lang` is the language the reverse model reads (the
/// forward target side); `forward_lang` is the language code the
/// synthetic corpus belongs to.
pub fn backtranslate(
    reverse_model: &TranslationModel,
    params: &ParamSet,
    reverse_src_lang: &str,
    forward_lang: &str,
    monolingual: &[Vec<String>],
    limit: usize,
    max_len: usize,
) -> Result<ParallelCorpus> {
    if reverse_model.steps_trained == 0 {
        return Err(Error::State(
            "back-translation refused: the reverse model has no training steps, \
             synthetic sources would be noise"
                .into(),
        ));
    }
    let take = limit.min(monolingual.len());
    let inputs: Vec<&Vec<String>> = monolingual.iter().take(take).collect();
    let outs: Vec<Result<Vec<String>>> = ordered_map(&inputs, |sent| {
        Ok(crate::nmt::translate(
            reverse_model,
            params,
            reverse_src_lang,
            sent,
            DecodeMode::Greedy,
            max_len,
        )?
        .tokens)
    });
    let mut pairs = Vec::with_capacity(take);
    for (sent, out) in inputs.iter().zip(outs) {
        let synthetic_source = out?;
        if synthetic_source.is_empty() {
            continue; // nothing usable came out; skip the pair
        }
        pairs.push((synthetic_source, (*sent).clone()));
    }
    let mut corpus = ParallelCorpus::new(forward_lang, pairs);
    corpus.synthetic = true;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use crate::nmt::model::tests::baseline_fixture;

    #[test]
    fn untrained_model_is_refused_with_explanation() {
        let (params, model) = baseline_fixture(4, 4);
        let mono = vec![tokenize("a b")];
        let err = backtranslate(&model, &params, "xx", "yy", &mono, 1, 10).unwrap_err();
        assert!(err.to_string().contains("no training steps"));
    }

    #[test]
    fn limit_zero_gives_an_empty_corpus() {
        let (params, mut model) = baseline_fixture(4, 4);
        model.steps_trained = 1;
        let mono = vec![tokenize("a b"), tokenize("c d")];
        let c = backtranslate(&model, &params, "xx", "yy", &mono, 0, 10).unwrap();
        assert!(c.is_empty());
        assert!(c.synthetic);
    }

    #[test]
    fn target_sides_are_the_monolingual_input() {
        let (params, mut model) = baseline_fixture(4, 4);
        model.steps_trained = 1;
        let mono = vec![tokenize("a b c"), tokenize("d e"), tokenize("f g")];
        let c = backtranslate(&model, &params, "xx", "yy", &mono, 3, 10).unwrap();
        assert_eq!(c.lang, "yy");
        for (pair, original) in c.pairs.iter().zip(&mono) {
            assert_eq!(&pair.1, original);
            assert!(!pair.0.is_empty());
        }
    }
}
