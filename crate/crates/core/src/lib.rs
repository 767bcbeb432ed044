//! Marginal string probabilities for token-level language models.
//!
//! A language model scores token sequences, but a string usually has many
//! valid tokenizations. This crate estimates the probability of the string
//! itself, summed over every tokenization, by importance sampling with a
//! block-wise proposal built from the model's own conditionals:
//!
//! 1. [`segmenter`] splits the string into word-like blocks of bounded length.
//! 2. [`tokenizer`] enumerates the (top-`M`) tokenizations of every block.
//! 3. [`sampler`] walks the blocks left to right, scoring each candidate with
//!    a [`lm::ScoringBackend`] given the tokens sampled so far, and draws one.
//! 4. [`estimator`] averages `P(T, S) / Q(T | S)` over `K` draws and reports
//!    bits per character against the default tokenization.
//!
//! [`oracle`] computes exact marginals (brute force and a token-lattice DP for
//! n-gram models) to validate the estimator, [`analysis`] produces dataset
//! level reports, and [`corpus`] packs raw texts into evaluation sequences.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod estimator;
pub mod lm;
pub mod math;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod segmenter;
pub mod tokenizer;

pub use error::{Error, Result};
pub use tokenizer::{CandidateSet, TokenId, Tokenization, TokenizerSpec};
