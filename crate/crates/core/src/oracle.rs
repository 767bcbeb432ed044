//! Exact marginals for validating the estimator.
//!
//! * [`exact_marginal_enumerate`] sums `P(T, S)` over every tokenization by
//!   depth-first search; works with any backend but is exponential.
//! * [`exact_marginal_lattice`] runs a forward pass over the token lattice for
//!   n-gram models, whose state is just the position and the last `n - 1` tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::MarginalEstimate;
use crate::lm::{NGramLm, NextTokenModel, ScoringBackend};
use crate::math::{bits_per_char, logaddexp, logsumexp};
use crate::segmenter::Block;
use crate::tokenizer::{TokenId, TokenizerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMarginal {
    pub log_prob: f64,
    /// Number of tokenizations summed.
    pub count: usize,
}

/// Positions from which the end of `s` is reachable with vocabulary tokens.
fn reachable(spec: &TokenizerSpec, s: &[u8]) -> Vec<bool> {
    let mut ok = vec![false; s.len() + 1];
    ok[s.len()] = true;
    for pos in (0..s.len()).rev() {
        ok[pos] = spec.matches_at(s, pos).any(|(_, len)| ok[pos + len]);
    }
    ok
}

/// `ln P(S)` by enumerating every tokenization, failing once more than `cap`
/// tokenizations have been seen.
pub fn exact_marginal_enumerate<B: ScoringBackend + ?Sized>(
    spec: &TokenizerSpec,
    backend: &B,
    s: &[u8],
    cap: usize,
) -> Result<ExactMarginal> {
    let ok = reachable(spec, s);
    if !ok[0] {
        return Err(Error::untokenizable(s));
    }
    let mut state = Enumeration { spec, backend, s, ok: &ok, cap, total: f64::NEG_INFINITY, count: 0 };
    let mut prefix = Vec::new();
    state.walk(0, &mut prefix, 0.0)?;
    Ok(ExactMarginal { log_prob: state.total, count: state.count })
}

struct Enumeration<'a, B: ?Sized> {
    spec: &'a TokenizerSpec,
    backend: &'a B,
    s: &'a [u8],
    ok: &'a [bool],
    cap: usize,
    total: f64,
    count: usize,
}

impl<B: ScoringBackend + ?Sized> Enumeration<'_, B> {
    fn walk(&mut self, pos: usize, prefix: &mut Vec<TokenId>, log_p: f64) -> Result<()> {
        if pos == self.s.len() {
            self.count += 1;
            if self.count > self.cap {
                return Err(Error::CapExceeded { cap: self.cap, reached: self.count });
            }
            self.total = logaddexp(self.total, log_p);
            return Ok(());
        }
        let edges: Vec<(TokenId, usize)> =
            self.spec.matches_at(self.s, pos).filter(|&(_, len)| self.ok[pos + len]).collect();
        let next: Vec<Vec<TokenId>> = edges.iter().map(|&(id, _)| vec![id]).collect();
        let scores = self.backend.score_continuations(prefix, &next)?;
        for (&(id, len), score) in edges.iter().zip(scores) {
            prefix.push(id);
            self.walk(pos + len, prefix, log_p + score)?;
            prefix.pop();
        }
        Ok(())
    }
}

/// `ln P(S)` under an n-gram model by dynamic programming over
/// `(byte position, last n - 1 tokens)`.
pub fn exact_marginal_lattice(spec: &TokenizerSpec, model: &NGramLm, s: &[u8]) -> Result<f64> {
    let window = model.order() - 1;
    let mut frontier: Vec<BTreeMap<Vec<TokenId>, f64>> = vec![BTreeMap::new(); s.len() + 1];
    frontier[0].insert(Vec::new(), 0.0);
    for pos in 0..s.len() {
        let states = std::mem::take(&mut frontier[pos]);
        if states.is_empty() {
            continue;
        }
        let edges: Vec<(TokenId, usize)> = spec.matches_at(s, pos).collect();
        for (history, log_p) in &states {
            for &(id, len) in &edges {
                let step = model.log_prob(history, id);
                let mut next = history.clone();
                next.push(id);
                if next.len() > window {
                    next.drain(..next.len() - window);
                }
                let slot = frontier[pos + len].entry(next).or_insert(f64::NEG_INFINITY);
                *slot = logaddexp(*slot, log_p + step);
            }
        }
    }
    let finals: Vec<f64> = frontier[s.len()].values().copied().collect();
    if finals.is_empty() {
        return Err(Error::untokenizable(s));
    }
    Ok(logsumexp(&finals))
}

/// One tokenization reachable by the block proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalOutcome {
    pub token_ids: Vec<TokenId>,
    pub log_p_joint: f64,
    pub log_q: f64,
}

/// Every tokenization the block proposal can produce, with its exact
/// `ln Q(T | S)`, by recursing over all per-block candidate choices.
/// Exponential in the number of blocks.
pub fn proposal_distribution<B: ScoringBackend + ?Sized>(
    spec: &TokenizerSpec,
    backend: &B,
    blocks: &[Block],
    max_candidates: usize,
) -> Result<Vec<ProposalOutcome>> {
    let candidates: Vec<Vec<Vec<TokenId>>> = blocks
        .iter()
        .map(|b| {
            spec.enumerate_tokenizations(&b.bytes, max_candidates)
                .map(|set| set.candidates.into_iter().map(|t| t.0).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    recurse(backend, &candidates, 0, &mut Vec::new(), 0.0, 0.0, &mut out)?;
    Ok(out)
}

fn recurse<B: ScoringBackend + ?Sized>(
    backend: &B,
    candidates: &[Vec<Vec<TokenId>>],
    block: usize,
    prefix: &mut Vec<TokenId>,
    log_p: f64,
    log_q: f64,
    out: &mut Vec<ProposalOutcome>,
) -> Result<()> {
    let Some(cands) = candidates.get(block) else {
        out.push(ProposalOutcome { token_ids: prefix.clone(), log_p_joint: log_p, log_q });
        return Ok(());
    };
    let scores = backend.score_continuations(prefix, cands)?;
    let norm = logsumexp(&scores);
    for (cand, score) in cands.iter().zip(scores) {
        let keep = prefix.len();
        prefix.extend_from_slice(cand);
        recurse(backend, candidates, block + 1, prefix, log_p + score, log_q + score - norm, out)?;
        prefix.truncate(keep);
    }
    Ok(())
}

/// An estimate set against the exact marginal, in bits per character.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub text: String,
    pub bpc_df: f64,
    pub bpc_is: f64,
    pub bpc_m: f64,
    pub df_minus_is: f64,
    pub is_minus_m: f64,
    pub ci_low_minus_m: f64,
    pub ci_high_minus_m: f64,
}

impl ValidationRow {
    pub fn new(text: impl Into<String>, estimate: &MarginalEstimate, exact_log_prob: f64) -> Self {
        let bpc_m = bits_per_char(exact_log_prob, estimate.char_count);
        ValidationRow {
            text: text.into(),
            bpc_df: estimate.bpc_df,
            bpc_is: estimate.bpc_is,
            bpc_m,
            df_minus_is: estimate.bpc_df - estimate.bpc_is,
            is_minus_m: estimate.bpc_is - bpc_m,
            ci_low_minus_m: estimate.ci_low - bpc_m,
            ci_high_minus_m: estimate.ci_high - bpc_m,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{train_ngram, UniformLm};
    use crate::segmenter::split_in_blocks;

    fn cab_spec() -> TokenizerSpec {
        TokenizerSpec::from_tokens(["a", "ab", "b", "c", "ca", "cab"], &[("c", "a"), ("a", "b"), ("ca", "b")])
            .unwrap()
    }

    #[test]
    fn cab_enumeration() {
        let got = exact_marginal_enumerate(&cab_spec(), &UniformLm::new(6), b"cab", 1000).unwrap();
        assert_eq!(got.count, 4);
        assert!((got.log_prob - (49.0f64 / 216.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn cab_lattice_unigram() {
        let spec = cab_spec();
        // Unigram over all six tokens once each with tiny alpha is uniform.
        let lm = train_ngram(&[vec![0, 1, 2, 3, 4, 5]], 1, 1.0, 6).unwrap();
        let got = exact_marginal_lattice(&spec, &lm, b"cab").unwrap();
        assert!((got - (49.0f64 / 216.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn single_byte_vocab_is_the_default() {
        let spec = TokenizerSpec::single_bytes();
        let lm = train_ngram(&[b"banana bread".iter().map(|&b| b as u32).collect()], 1, 0.5, 256).unwrap();
        let s = b"abba";
        let e = exact_marginal_enumerate(&spec, &lm, s, 10).unwrap();
        assert_eq!(e.count, 1);
        let default = spec.default_tokenize(s).unwrap();
        let direct: f64 = default.ids().iter().map(|&t| lm.log_prob(&[], t)).sum();
        assert!((e.log_prob - direct).abs() < 1e-12);
        assert!((exact_marginal_lattice(&spec, &lm, s).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let spec = TokenizerSpec::from_tokens(["a", "aa"], &[] as &[(&str, &str)]).unwrap();
        let err = exact_marginal_enumerate(&spec, &UniformLm::new(2), &[b'a'; 20], 100).unwrap_err();
        assert!(matches!(err, Error::CapExceeded { cap: 100, reached: 101 }));
    }

    #[test]
    fn untokenizable_strings() {
        let spec = cab_spec();
        let lm = train_ngram(&[vec![0]], 2, 1.0, 6).unwrap();
        assert!(exact_marginal_enumerate(&spec, &lm, b"cx", 10).is_err());
        assert!(exact_marginal_lattice(&spec, &lm, b"cx").is_err());
    }

    #[test]
    fn long_string_lattice_is_finite() {
        // 200 bytes over {a, aa, aaa, b, ab, ba}: astronomically many tokenizations.
        let spec = TokenizerSpec::from_tokens(["a", "aa", "aaa", "b", "ab", "ba"], &[] as &[(&str, &str)]).unwrap();
        let corpus = vec![vec![0, 1, 2, 3, 4, 5, 0, 0, 1, 3, 2, 4]];
        let lm = train_ngram(&corpus, 2, 0.3, 6).unwrap();
        let s: Vec<u8> = (0..200).map(|i| if i % 7 == 3 { b'b' } else { b'a' }).collect();
        let start = std::time::Instant::now();
        let got = exact_marginal_lattice(&spec, &lm, &s).unwrap();
        assert!(got.is_finite() && got < 0.0);
        assert!(start.elapsed().as_secs_f64() < 1.0);
        // Prefix cross-check against enumeration.
        for len in 1..=12 {
            let e = exact_marginal_enumerate(&spec, &lm, &s[..len], 1_000_000).unwrap();
            let l = exact_marginal_lattice(&spec, &lm, &s[..len]).unwrap();
            assert!((e.log_prob - l).abs() < 1e-10, "len {len}");
        }
    }

    #[test]
    fn proposal_distribution_sums_to_one() {
        let spec = cab_spec();
        let lm = train_ngram(&[vec![3, 0, 2, 5, 4, 1]], 2, 0.7, 6).unwrap();
        let blocks = split_in_blocks(&spec, b"cab cab", 3);
        // The space is not in this vocabulary.
        assert!(blocks.is_err());
        let blocks = split_in_blocks(&TokenizerSpec::single_bytes(), b"cabcab", 3).unwrap();
        assert_eq!(blocks.len(), 2);
        let outcomes = proposal_distribution(&spec, &lm, &blocks, 100).unwrap();
        assert_eq!(outcomes.len(), 16);
        let total: f64 = outcomes.iter().map(|o| o.log_q.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
