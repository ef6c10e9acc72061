//! Property tests for the structural invariants.

use proptest::collection::vec;
use proptest::prelude::*;

use uninmt::corpus::bpe::{learn_bpe, BpeModel};
use uninmt::embeddings::EmbeddingTable;
use uninmt::pipeline::bleu;
use uninmt::projection::{project, OrthogonalMap};
use uninmt::rng::Rng;
use uninmt::tensor::kernels::{dot, matmul, softmax_temperature};
use uninmt::tensor::svd::svd;

fn word_strategy() -> impl Strategy<Value = String> {
    // Lowercase words without the reserved end-of-word marker.
    "[a-f]{1,6}"
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<String>>> {
    vec(vec(word_strategy(), 1..8), 1..20)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bpe_apply_then_detokenize_is_lossless(sentences in corpus_strategy(), num_ops in 0usize..40) {
        let model = learn_bpe(&sentences, num_ops).unwrap();
        for sent in &sentences {
            let segmented = model.apply(sent);
            prop_assert_eq!(&BpeModel::detokenize(&segmented), sent);
        }
    }

    #[test]
    fn bpe_learning_is_deterministic(sentences in corpus_strategy(), num_ops in 0usize..30) {
        let a = learn_bpe(&sentences, num_ops).unwrap();
        let b = learn_bpe(&sentences, num_ops).unwrap();
        prop_assert_eq!(a.merges, b.merges);
    }

    #[test]
    fn softmax_is_a_probability_vector(
        scores in vec(-1e3f64..1e3, 1..40),
        tau in prop_oneof![Just(0.05), Just(1.0), 0.01f64..10.0],
    ) {
        let q = softmax_temperature(&scores, tau).unwrap();
        prop_assert!(q.iter().all(|&x| x >= 0.0));
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_an_isometry(seed in 0u64..1000, n in 2usize..12, dim in 2usize..10) {
        let mut rng = Rng::seed_from(seed);
        let mut table = EmbeddingTable::new("xx", dim);
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            table.push(&format!("w{i}"), &v).unwrap();
        }
        let table = table.normalize_rows();
        // Random rotation via the SVD of a Gaussian matrix.
        let g: Vec<f64> = (0..dim * dim).map(|_| rng.normal()).collect();
        let f = svd(&g, dim, dim).unwrap();
        let rot = matmul(&f.u, &f.vt, dim, dim, dim);
        let map = OrthogonalMap { lang: "xx".into(), dim, matrix: rot };
        let projected = project(&table, &map).unwrap();
        for i in 0..n {
            for j in 0..n {
                let before = dot(table.row(i), table.row(j));
                let after = dot(projected.row(i), projected.row(j));
                prop_assert!((before - after).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bleu_is_bounded_and_exact_on_identity(sentences in vec(vec(word_strategy(), 4..9), 1..16)) {
        // Identity scores 100 whenever the corpus contains 4-grams at
        // all (the unsmoothed score of a 4-gram-free corpus is 0).
        let report = bleu(&sentences, &sentences).unwrap();
        prop_assert!((report.bleu - 100.0).abs() < 1e-9);
        // Against a shifted copy it stays within bounds.
        let mut shifted = sentences.clone();
        shifted.rotate_right(1);
        let report = bleu(&sentences, &shifted).unwrap();
        prop_assert!((0.0..=100.0).contains(&report.bleu));
    }

    #[test]
    fn svd_reconstructs_arbitrary_small_matrices(
        data in vec(-10.0f64..10.0, 1..36),
        rows in 1usize..6,
    ) {
        let cols = data.len() / rows;
        prop_assume!(cols >= 1);
        let data = &data[..rows * cols];
        let f = svd(data, rows, cols).unwrap();
        // U diag(S) Vt reconstructs within the contract bound.
        let mut us = f.u.clone();
        for r in 0..f.p {
            for j in 0..f.r {
                us[r * f.r + j] *= f.s[j];
            }
        }
        let back = matmul(&us, &f.vt, f.p, f.r, f.q);
        for (a, b) in back.iter().zip(data) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
