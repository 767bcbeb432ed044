#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokmarg::lm::{train_ngram, NGramLm};
use tokmarg::TokenizerSpec;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_spec() -> TokenizerSpec {
    TokenizerSpec::load(fixture("vocab.json"), fixture("merges.txt")).unwrap()
}

/// A small random BPE vocabulary over `alphabet`: the single letters, then
/// merges of two existing tokens into new ones of at most `max_token_len`
/// bytes, until `vocab_size` tokens exist or no merge is possible.
pub fn random_bpe<R: Rng>(rng: &mut R, alphabet: &[u8], vocab_size: usize, max_token_len: usize) -> (Vec<Vec<u8>>, Vec<(Vec<u8>, Vec<u8>)>) {
    let mut tokens: Vec<Vec<u8>> = alphabet.iter().map(|&b| vec![b]).collect();
    let mut merges = Vec::new();
    let mut attempts = 0;
    while tokens.len() < vocab_size && attempts < 200 {
        attempts += 1;
        let a = tokens.choose(rng).unwrap().clone();
        let b = tokens.choose(rng).unwrap().clone();
        let joined = [a.as_slice(), b.as_slice()].concat();
        if joined.len() > max_token_len || tokens.contains(&joined) {
            continue;
        }
        tokens.push(joined);
        merges.push((a, b));
    }
    (tokens, merges)
}

pub struct Instance {
    pub spec: TokenizerSpec,
    pub tokens: Vec<Vec<u8>>,
    pub merges: Vec<(Vec<u8>, Vec<u8>)>,
    pub lm: NGramLm,
    pub text: Vec<u8>,
}

/// Random vocabulary of at most `max_vocab` tokens, a random string of
/// `1..=max_len` bytes and an n-gram model trained on random token streams.
pub fn random_instance(seed: u64, max_vocab: usize, max_len: usize, order: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alphabet = &b"abc"[..rng.random_range(1..=3)];
    let vocab_size = rng.random_range(alphabet.len()..=max_vocab);
    let (tokens, merges) = random_bpe(&mut rng, alphabet, vocab_size, 4);
    let spec = TokenizerSpec::from_tokens(&tokens, &merges).unwrap();
    let len = rng.random_range(1..=max_len);
    let text: Vec<u8> = (0..len).map(|_| *alphabet.choose(&mut rng).unwrap()).collect();
    let v = tokens.len() as u32;
    let corpus: Vec<Vec<u32>> =
        (0..4).map(|_| (0..rng.random_range(0..30)).map(|_| rng.random_range(0..v)).collect()).collect();
    let alpha = rng.random_range(0.05..2.0);
    let lm = train_ngram(&corpus, order, alpha, tokens.len()).unwrap();
    Instance { spec, tokens, merges, lm, text }
}
