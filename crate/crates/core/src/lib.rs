//! A self-contained universal multilingual NMT toolkit.
//!
//! Builds source-word embeddings as probability mixtures over a shared
//! universal token space, routes encoder states through a mixture of
//! per-language experts, and trains a small attentional encoder-decoder
//! on mixed multilingual corpora. Everything runs on a hand-rolled f64
//! tensor core with reverse-mode autodiff, so training runs are
//! bit-reproducible from a `(config, seed)` pair.
//!
//! With the `parallel` feature (on by default) the hot loops — batch
//! gradients, finite-difference checking, corpus-level translation and
//! scoring — run on rayon. Results are bit-identical to the sequential
//! fallback because work is split at fixed boundaries and reduced in a
//! fixed order.

pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod mole;
pub mod nmt;
pub mod parallel;
pub mod pipeline;
pub mod projection;
pub mod rng;
pub mod tensor;
pub mod ulr;

pub use error::{Error, Result};
