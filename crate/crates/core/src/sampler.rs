//! The block-wise proposal `Q(T | S)`.
//!
//! Blocks are visited left to right. For each block every candidate
//! tokenization is scored by the model given the tokens already drawn, the
//! scores are normalized over the candidates, and one candidate is drawn. The
//! product of the normalized weights of the drawn candidates is `Q(T | S)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BackendError, Result};
use crate::lm::ScoringBackend;
use crate::math::logsumexp;
use crate::segmenter::Block;
use crate::tokenizer::{TokenId, TokenizerSpec};

/// A block together with its enumerated candidates.
#[derive(Debug, Clone)]
pub struct BlockProposal {
    pub block: Block,
    pub candidates: Vec<Vec<TokenId>>,
    pub truncated: bool,
    /// Rank of the block's default tokenization among the candidates, if kept.
    pub default_rank: Option<usize>,
}

/// Candidate sets for every block of one sequence. Enumeration is done once
/// and reused by every sample.
#[derive(Debug, Clone)]
pub struct Proposal {
    blocks: Vec<BlockProposal>,
}

/// One draw from the proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizationSample {
    pub token_ids: Vec<TokenId>,
    /// `ln P(T, S)`.
    pub log_p_joint: f64,
    /// `ln Q(T | S)`.
    pub log_q: f64,
    pub blocks: Vec<BlockDraw>,
}

impl TokenizationSample {
    pub fn log_ratio(&self) -> f64 {
        self.log_p_joint - self.log_q
    }

    pub fn non_default_count(&self) -> usize {
        self.blocks.iter().filter(|b| !b.is_default).count()
    }
}

/// What was drawn for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDraw {
    pub block: usize,
    pub rank: usize,
    pub is_default: bool,
    pub num_tokens: usize,
    /// Normalized log weight of the drawn candidate.
    pub log_s: f64,
    /// Unnormalized model log score of the drawn candidate.
    pub log_score: f64,
}

impl Proposal {
    /// Enumerates up to `max_candidates` tokenizations of every block.
    pub fn new(spec: &TokenizerSpec, blocks: Vec<Block>, max_candidates: usize) -> Result<Self> {
        let blocks = blocks
            .into_iter()
            .map(|block| {
                let set = spec.enumerate_tokenizations(&block.bytes, max_candidates)?;
                let default_rank = set.position(&block.default);
                Ok(BlockProposal {
                    candidates: set.candidates.into_iter().map(|t| t.0).collect(),
                    truncated: set.truncated,
                    default_rank,
                    block,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Proposal { blocks })
    }

    pub fn blocks(&self) -> &[BlockProposal] {
        &self.blocks
    }

    /// Draws one tokenization. Makes exactly one backend call per block.
    ///
    /// The draw for each block is an inverse-CDF lookup of one uniform from
    /// `rng` against the normalized weights in candidate order, so a given
    /// stream always yields the same sample.
    pub fn sample<B, R>(&self, backend: &B, rng: &mut R) -> Result<TokenizationSample>
    where
        B: ScoringBackend + ?Sized,
        R: Rng + ?Sized,
    {
        let mut tokens = Vec::new();
        let mut log_p = 0.0;
        let mut log_q = 0.0;
        let mut draws = Vec::with_capacity(self.blocks.len());
        for (index, bp) in self.blocks.iter().enumerate() {
            let scores = backend.score_continuations(&tokens, &bp.candidates)?;
            let log_norm = logsumexp(&scores);
            if log_norm == f64::NEG_INFINITY {
                return Err(BackendError::ZeroMass.into());
            }
            let u: f64 = rng.random();
            let rank = draw_index(&scores, log_norm, u);
            let chosen = &bp.candidates[rank];
            let log_s = scores[rank] - log_norm;
            tokens.extend_from_slice(chosen);
            log_p += scores[rank];
            log_q += log_s;
            draws.push(BlockDraw {
                block: index,
                rank,
                is_default: bp.default_rank == Some(rank),
                num_tokens: chosen.len(),
                log_s,
                log_score: scores[rank],
            });
        }
        Ok(TokenizationSample { token_ids: tokens, log_p_joint: log_p, log_q, blocks: draws })
    }
}

/// Smallest index whose cumulative normalized weight exceeds `u`.
fn draw_index(scores: &[f64], log_norm: f64, u: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &s) in scores.iter().enumerate() {
        let p = (s - log_norm).exp();
        if p > 0.0 {
            last_positive = i;
            cumulative += p;
            if u < cumulative {
                return i;
            }
        }
    }
    // Rounding left the total a hair below u.
    last_positive
}

/// One draw of a tokenization of the sequence covered by `blocks`.
pub fn sample_tokenization<B, R>(
    spec: &TokenizerSpec,
    backend: &B,
    blocks: Vec<Block>,
    max_candidates: usize,
    rng: &mut R,
) -> Result<TokenizationSample>
where
    B: ScoringBackend + ?Sized,
    R: Rng + ?Sized,
{
    Proposal::new(spec, blocks, max_candidates)?.sample(backend, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::UniformLm;
    use crate::rng::stream_rng;
    use crate::segmenter::split_in_blocks;

    fn cab_spec() -> TokenizerSpec {
        TokenizerSpec::from_tokens(["a", "ab", "b", "c", "ca", "cab"], &[("c", "a"), ("a", "b"), ("ca", "b")])
            .unwrap()
    }

    #[test]
    fn single_byte_vocab_has_q_one() {
        let spec = TokenizerSpec::single_bytes();
        let lm = UniformLm::new(256);
        let s = b"hello there world";
        let blocks = split_in_blocks(&spec, s, 8).unwrap();
        let n = blocks.len();
        let sample = sample_tokenization(&spec, &lm, blocks, 128, &mut stream_rng(1, 0, 0)).unwrap();
        assert_eq!(sample.log_q, 0.0);
        assert_eq!(sample.blocks.len(), n);
        assert!(sample.blocks.iter().all(|b| b.is_default));
        assert_eq!(spec.decode(&sample.token_ids), s);
    }

    #[test]
    fn cab_draw_frequencies_follow_posterior() {
        let spec = cab_spec();
        let lm = UniformLm::new(6);
        let blocks = split_in_blocks(&spec, b"cab", 3).unwrap();
        assert_eq!(blocks.len(), 1);
        let proposal = Proposal::new(&spec, blocks, 10).unwrap();
        assert_eq!(proposal.blocks()[0].default_rank, Some(0));

        // Posterior: [cab] 36/49, [c,ab] 6/49, [ca,b] 6/49, [c,a,b] 1/49.
        let expected: [f64; 4] = [36.0 / 49.0, 6.0 / 49.0, 6.0 / 49.0, 1.0 / 49.0];
        let n = 20_000;
        let mut counts = [0usize; 4];
        for k in 0..n {
            let s = proposal.sample(&lm, &mut stream_rng(42, 0, k)).unwrap();
            counts[s.blocks[0].rank] += 1;
            assert!((s.log_q - expected[s.blocks[0].rank].ln()).abs() < 1e-12);
            // One block equal to the whole string: the ratio is the exact marginal.
            assert!((s.log_ratio() - (49.0f64 / 216.0).ln()).abs() < 1e-12);
        }
        for (c, p) in counts.iter().zip(expected) {
            let freq = *c as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 5.0 * se, "freq {freq} vs {p}");
        }
    }

    #[test]
    fn same_stream_same_sample() {
        let spec = cab_spec();
        let lm = UniformLm::new(6);
        let blocks = split_in_blocks(&spec, b"cab", 3).unwrap();
        let proposal = Proposal::new(&spec, blocks, 10).unwrap();
        for k in 0..20 {
            let a = proposal.sample(&lm, &mut stream_rng(9, 3, k)).unwrap();
            let b = proposal.sample(&lm, &mut stream_rng(9, 3, k)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn draw_index_boundaries() {
        let scores = [(0.25f64).ln(), f64::NEG_INFINITY, (0.75f64).ln()];
        assert_eq!(draw_index(&scores, 0.0, 0.0), 0);
        assert_eq!(draw_index(&scores, 0.0, 0.2499), 0);
        assert_eq!(draw_index(&scores, 0.0, 0.25), 2);
        assert_eq!(draw_index(&scores, 0.0, 0.999_999_999_999), 2);
    }

    #[test]
    fn untokenizable_block_is_reported() {
        let spec = cab_spec();
        let blocks = split_in_blocks(&TokenizerSpec::single_bytes(), b"cxb", 3).unwrap();
        assert!(Proposal::new(&spec, blocks, 4).is_err());
    }
}
