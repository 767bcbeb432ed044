mod common;

use common::random_instance;
use proptest::prelude::*;
use tokmarg::lm::{train_ngram, ScoringBackend, UniformLm};
use tokmarg::math::logsumexp;
use tokmarg::oracle::{exact_marginal_enumerate, exact_marginal_lattice, proposal_distribution};
use tokmarg::segmenter::split_in_blocks;
use tokmarg::TokenizerSpec;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lattice_agrees_with_enumeration(seed in any::<u64>(), order in 1usize..4) {
        let inst = random_instance(seed, 12, 12, order);
        let e = exact_marginal_enumerate(&inst.spec, &inst.lm, &inst.text, 10_000_000).unwrap();
        let l = exact_marginal_lattice(&inst.spec, &inst.lm, &inst.text).unwrap();
        prop_assert!((e.log_prob - l).abs() < 1e-10, "enumeration {} lattice {}", e.log_prob, l);
    }

    #[test]
    fn marginal_dominates_default(seed in any::<u64>()) {
        let inst = random_instance(seed, 12, 12, 2);
        let m = exact_marginal_lattice(&inst.spec, &inst.lm, &inst.text).unwrap();
        let default = inst.spec.default_tokenize(&inst.text).unwrap();
        let d = inst.lm.score_sequence(default.ids()).unwrap();
        prop_assert!(m >= d - 1e-12);
    }

    #[test]
    fn adding_a_token_never_lowers_the_marginal(seed in any::<u64>(), extra in "[abc]{2,4}") {
        let inst = random_instance(seed, 11, 12, 2);
        prop_assume!(!inst.tokens.iter().any(|t| t == extra.as_bytes()));
        let mut tokens = inst.tokens.clone();
        tokens.push(extra.into_bytes());
        let bigger = TokenizerSpec::from_tokens(&tokens, &inst.merges).unwrap();
        // One model over the larger vocabulary scores both.
        let corpus = vec![(0..tokens.len() as u32).chain([0, 1, 0]).collect()];
        let lm = train_ngram(&corpus, 2, 0.5, tokens.len()).unwrap();
        let before = exact_marginal_lattice(&inst.spec, &lm, &inst.text).unwrap();
        let after = exact_marginal_lattice(&bigger, &lm, &inst.text).unwrap();
        prop_assert!(after >= before - 1e-12, "before {} after {}", before, after);
    }

    #[test]
    fn proposal_is_normalized(seed in any::<u64>(), l in 1usize..8) {
        let inst = random_instance(seed, 10, 10, 2);
        let blocks = split_in_blocks(&inst.spec, &inst.text, l).unwrap();
        let outcomes = proposal_distribution(&inst.spec, &inst.lm, &blocks, usize::MAX).unwrap();
        let total: f64 = outcomes.iter().map(|o| o.log_q.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "sum Q = {}", total);

        let exact = exact_marginal_lattice(&inst.spec, &inst.lm, &inst.text).unwrap();
        // E_Q[P / Q] is the mass of the proposal's support, never above the marginal.
        let support = logsumexp(&outcomes.iter().map(|o| o.log_p_joint).collect::<Vec<_>>());
        prop_assert!(support <= exact + 1e-12);
        for o in &outcomes {
            prop_assert_eq!(inst.spec.decode(&o.token_ids), inst.text.clone());
        }
    }

    #[test]
    fn single_block_proposal_covers_every_tokenization(seed in any::<u64>()) {
        let inst = random_instance(seed, 10, 10, 2);
        let blocks = split_in_blocks(&inst.spec, &inst.text, inst.text.len()).unwrap();
        prop_assert_eq!(blocks.len(), 1);
        let outcomes = proposal_distribution(&inst.spec, &inst.lm, &blocks, usize::MAX).unwrap();
        let mean: f64 = outcomes.iter().map(|o| o.log_q.exp() * (o.log_p_joint - o.log_q).exp()).sum();
        let exact = exact_marginal_lattice(&inst.spec, &inst.lm, &inst.text).unwrap();
        prop_assert!((mean.ln() - exact).abs() < 1e-10);
    }
}

#[test]
fn cab_has_four_tokenizations_and_known_marginal() {
    let spec =
        TokenizerSpec::from_tokens(["a", "ab", "b", "c", "ca", "cab"], &[("c", "a"), ("a", "b"), ("ca", "b")]).unwrap();
    let set = spec.enumerate_tokenizations(b"cab", usize::MAX).unwrap();
    assert_eq!(set.total, 4);
    let e = exact_marginal_enumerate(&spec, &UniformLm::new(6), b"cab", 10).unwrap();
    assert_eq!(e.count, 4);
    // 1/6 + 2/36 + 1/216
    assert!((e.log_prob.exp() - 49.0 / 216.0).abs() < 1e-15);
}
