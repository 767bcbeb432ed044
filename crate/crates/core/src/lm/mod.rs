//! The scoring contract for autoregressive models, and the backends that
//! implement it.

mod ngram;
mod remote;
pub mod wire;

use crate::error::{BackendError, Result};
use crate::tokenizer::TokenId;

pub use ngram::{train_ngram, NGramLm};
pub use remote::RemoteBackend;

/// An autoregressive model that can score token continuations.
///
/// All values are natural logs. Implementations must be shareable across
/// threads; the estimator calls them concurrently.
pub trait ScoringBackend: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Maximum number of conditioning tokens, `0` for unlimited. Longer
    /// prefixes are truncated from the left.
    fn context_limit(&self) -> usize {
        0
    }

    /// Beginning-of-sequence token the backend conditions on internally, if any.
    fn bos_token(&self) -> Option<TokenId> {
        None
    }

    fn model_name(&self) -> String;

    /// For every candidate `c`, `sum_k ln P(c[k] | prefix ++ c[..k])`.
    fn score_continuations(&self, prefix: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>>;

    /// `ln P(T)` of a whole token sequence.
    fn score_sequence(&self, ids: &[TokenId]) -> Result<f64> {
        if ids.is_empty() {
            return Ok(0.0);
        }
        Ok(self.score_continuations(&[], &[ids.to_vec()])?[0])
    }
}

impl<B: ScoringBackend + ?Sized> ScoringBackend for &B {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_limit(&self) -> usize {
        (**self).context_limit()
    }
    fn bos_token(&self) -> Option<TokenId> {
        (**self).bos_token()
    }
    fn model_name(&self) -> String {
        (**self).model_name()
    }
    fn score_continuations(&self, prefix: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        (**self).score_continuations(prefix, candidates)
    }
}

impl<B: ScoringBackend + ?Sized> ScoringBackend for Box<B> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_limit(&self) -> usize {
        (**self).context_limit()
    }
    fn bos_token(&self) -> Option<TokenId> {
        (**self).bos_token()
    }
    fn model_name(&self) -> String {
        (**self).model_name()
    }
    fn score_continuations(&self, prefix: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        (**self).score_continuations(prefix, candidates)
    }
}

/// An in-process model with an explicit next-token distribution.
pub trait NextTokenModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// How many trailing context tokens the model looks at (`None` = all).
    fn context_window(&self) -> Option<usize>;

    /// `ln P(token | context)`.
    fn log_prob(&self, context: &[TokenId], token: TokenId) -> f64;
}

/// Shared `score_continuations` for [`NextTokenModel`]s.
pub(crate) fn score_with_model<M: NextTokenModel + ?Sized>(
    model: &M,
    prefix: &[TokenId],
    candidates: &[Vec<TokenId>],
) -> Result<Vec<f64>> {
    let vocab_size = model.vocab_size();
    let check = |id: TokenId| {
        if (id as usize) < vocab_size {
            Ok(())
        } else {
            Err(BackendError::IdOutOfRange { id, vocab_size })
        }
    };
    prefix.iter().try_for_each(|&id| check(id))?;
    let keep = model.context_window().map_or(prefix.len(), |w| w.min(prefix.len()));
    let tail = &prefix[prefix.len() - keep..];

    let mut context = Vec::with_capacity(tail.len() + 8);
    candidates
        .iter()
        .map(|cand| {
            if cand.is_empty() {
                return Err(BackendError::EmptyCandidate.into());
            }
            context.clear();
            context.extend_from_slice(tail);
            let mut total = 0.0;
            for &id in cand {
                check(id)?;
                total += model.log_prob(&context, id);
                context.push(id);
            }
            Ok(total)
        })
        .collect()
}

/// Every token equally likely regardless of context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformLm {
    vocab_size: usize,
}

impl UniformLm {
    pub fn new(vocab_size: usize) -> Self {
        assert!(vocab_size > 0, "uniform model needs a non-empty vocabulary");
        UniformLm { vocab_size }
    }
}

impl NextTokenModel for UniformLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn context_window(&self) -> Option<usize> {
        Some(0)
    }
    fn log_prob(&self, _context: &[TokenId], _token: TokenId) -> f64 {
        -(self.vocab_size as f64).ln()
    }
}

impl ScoringBackend for UniformLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn model_name(&self) -> String {
        format!("uniform-{}", self.vocab_size)
    }
    fn score_continuations(&self, prefix: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        score_with_model(self, prefix, candidates)
    }
}
