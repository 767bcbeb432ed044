use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{score_with_model, NextTokenModel, ScoringBackend};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

/// Add-alpha smoothed token n-gram model.
///
/// `P(t | ctx) = (count(ctx, t) + alpha) / (count(ctx) + alpha * |V|)` where
/// `ctx` is the last `order - 1` tokens. Near the start of a sequence, where
/// fewer tokens are available, the shorter context is used as is, so the empty
/// context gives the unigram estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    // Indexed by context length, 0..order.
    tables: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

/// Counts every n-gram (and every shorter history) in `corpus`.
pub fn train_ngram(corpus: &[Vec<TokenId>], order: usize, alpha: f64, vocab_size: usize) -> Result<NGramLm> {
    if order == 0 {
        return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("smoothing constant must be positive, got {alpha}")));
    }
    if vocab_size == 0 {
        return Err(Error::InvalidArgument("vocabulary size must be positive".into()));
    }
    let mut tables = vec![HashMap::new(); order];
    for seq in corpus {
        for (i, &tok) in seq.iter().enumerate() {
            if tok as usize >= vocab_size {
                return Err(Error::InvalidArgument(format!(
                    "token {tok} outside vocabulary of size {vocab_size}"
                )));
            }
            for (len, table) in tables.iter_mut().enumerate().take(i.min(order - 1) + 1) {
                let entry: &mut ContextCounts = table.entry(seq[i - len..i].to_vec()).or_default();
                entry.total += 1;
                *entry.next.entry(tok).or_default() += 1;
            }
        }
    }
    Ok(NGramLm { order, alpha, vocab_size, tables })
}

impl NGramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Raw `(count(ctx, t), count(ctx))` for the context actually used.
    pub fn counts(&self, context: &[TokenId], token: TokenId) -> (u64, u64) {
        let len = context.len().min(self.order - 1);
        let ctx = &context[context.len() - len..];
        self.tables[len]
            .get(ctx)
            .map_or((0, 0), |c| (c.next.get(&token).copied().unwrap_or(0), c.total))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut contexts: Vec<ContextEntry> = self
            .tables
            .iter()
            .flat_map(|t| t.iter())
            .map(|(ctx, counts)| {
                let mut next: Vec<(TokenId, u64)> = counts.next.iter().map(|(&t, &c)| (t, c)).collect();
                next.sort_unstable();
                ContextEntry { context: ctx.clone(), next }
            })
            .collect();
        contexts.sort_by(|a, b| a.context.len().cmp(&b.context.len()).then_with(|| a.context.cmp(&b.context)));
        let file = NGramFile { order: self.order, alpha: self.alpha, vocab_size: self.vocab_size, contexts };
        serde_json::to_string(&file).expect("n-gram model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NGramFile = serde_json::from_str(text)?;
        if file.order == 0 || !(file.alpha > 0.0) || file.vocab_size == 0 {
            return Err(Error::InvalidArgument("n-gram file has invalid order, alpha or vocab size".into()));
        }
        let mut tables = vec![HashMap::new(); file.order];
        for entry in file.contexts {
            let table = tables.get_mut(entry.context.len()).ok_or_else(|| {
                Error::InvalidArgument(format!("context of length {} exceeds order", entry.context.len()))
            })?;
            let counts = ContextCounts {
                total: entry.next.iter().map(|&(_, c)| c).sum(),
                next: entry.next.into_iter().collect(),
            };
            table.insert(entry.context, counts);
        }
        Ok(NGramLm { order: file.order, alpha: file.alpha, vocab_size: file.vocab_size, tables })
    }
}

#[derive(Serialize, Deserialize)]
struct NGramFile {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    contexts: Vec<ContextEntry>,
}

#[derive(Serialize, Deserialize)]
struct ContextEntry {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

impl NextTokenModel for NGramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_window(&self) -> Option<usize> {
        Some(self.order - 1)
    }

    fn log_prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let (count, total) = self.counts(context, token);
        ((count as f64 + self.alpha) / (total as f64 + self.alpha * self.vocab_size as f64)).ln()
    }
}

impl ScoringBackend for NGramLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn model_name(&self) -> String {
        format!("ngram-{}-alpha{}", self.order, self.alpha)
    }

    fn score_continuations(&self, prefix: &[TokenId], candidates: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        score_with_model(self, prefix, candidates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unigram_add_one() {
        // Token 3 is 5 of 10 tokens.
        let corpus = vec![vec![3, 3, 3, 3, 3, 0, 1, 2, 4, 5]];
        let lm = train_ngram(&corpus, 1, 1.0, 6).unwrap();
        let p = lm.log_prob(&[0, 1], 3).exp();
        assert!((p - 0.375).abs() < 1e-15);
    }

    fn fixture() -> NGramLm {
        train_ngram(&[vec![0, 1, 2], vec![0, 1, 1], vec![2, 0]], 2, 0.5, 3).unwrap()
    }

    #[test]
    fn bigram_matches_hand_table() {
        let lm = fixture();
        // Unigram counts over all 8 tokens: 0 -> 3, 1 -> 3, 2 -> 2.
        assert!((lm.log_prob(&[], 0).exp() - 3.5 / 9.5).abs() < 1e-15);
        assert!((lm.log_prob(&[], 2).exp() - 2.5 / 9.5).abs() < 1e-15);
        // After 0: 1 twice.
        assert!((lm.log_prob(&[0], 1).exp() - 2.5 / 3.5).abs() < 1e-15);
        assert!((lm.log_prob(&[2, 0], 2).exp() - 0.5 / 3.5).abs() < 1e-15);
        // After 1: 2 once, 1 once.
        assert!((lm.log_prob(&[1], 1).exp() - 1.5 / 3.5).abs() < 1e-15);
        // After 2: 0 once (only the final 2 of sequence one has no successor).
        assert!((lm.log_prob(&[2], 0).exp() - 1.5 / 2.5).abs() < 1e-15);

        let got = lm.score_continuations(&[2], &[vec![0, 1], vec![1]]).unwrap();
        let want0 = (1.5f64 / 2.5).ln() + (2.5f64 / 3.5).ln();
        let want1 = (0.5f64 / 2.5).ln();
        assert!((got[0] - want0).abs() < 1e-14);
        assert!((got[1] - want1).abs() < 1e-14);
    }

    #[test]
    fn empty_context_backs_off_to_unigram() {
        let lm = fixture();
        let uni = train_ngram(&[vec![0, 1, 2], vec![0, 1, 1], vec![2, 0]], 1, 0.5, 3).unwrap();
        for t in 0..3 {
            assert_eq!(lm.log_prob(&[], t), uni.log_prob(&[], t));
        }
    }

    #[test]
    fn json_round_trip() {
        let lm = fixture();
        let back = NGramLm::from_json(&lm.to_json()).unwrap();
        assert_eq!(back, lm);
        assert_eq!(back.to_json(), lm.to_json());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(train_ngram(&[vec![0]], 0, 1.0, 2).is_err());
        assert!(train_ngram(&[vec![0]], 2, 0.0, 2).is_err());
        assert!(train_ngram(&[vec![5]], 2, 1.0, 2).is_err());
    }

    proptest! {
        #[test]
        fn conditionals_normalize(
            corpus in proptest::collection::vec(proptest::collection::vec(0u32..8, 0..20), 1..6),
            order in 1usize..4,
            alpha in 0.01f64..3.0,
            prefix in proptest::collection::vec(0u32..8, 0..6),
        ) {
            let lm = train_ngram(&corpus, order, alpha, 8).unwrap();
            let cands: Vec<Vec<TokenId>> = (0..8).map(|t| vec![t]).collect();
            let scores = lm.score_continuations(&prefix, &cands).unwrap();
            let total: f64 = scores.iter().map(|s| s.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(scores.iter().all(|s| s.is_finite()));
            // Deterministic.
            prop_assert_eq!(scores, lm.score_continuations(&prefix, &cands).unwrap());
        }
    }
}
