//! Byte-level BPE tokenizers: loading GPT-2 style vocab/merges files, the
//! default (greedy merge) tokenization, and enumeration of every valid
//! tokenization of a byte span.

pub mod byte_level;
mod enumerate;
mod trie;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use fancy_regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use enumerate::CandidateSet;
use trie::TokenTrie;

pub type TokenId = u32;

/// The GPT-2 pre-tokenizer pattern.
pub const GPT2_PATTERN: &str =
    r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

/// A sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tokenization(pub Vec<TokenId>);

impl Tokenization {
    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<TokenId>> for Tokenization {
    fn from(ids: Vec<TokenId>) -> Self {
        Tokenization(ids)
    }
}

/// Vocabulary, merge table and pre-tokenizer of a byte-level BPE tokenizer.
///
/// Immutable once built; every method takes `&self`.
#[derive(Clone)]
pub struct TokenizerSpec {
    tokens: Vec<Vec<u8>>,
    ids: HashMap<Vec<u8>, TokenId>,
    // (left, right) -> (rank, merged)
    merges: HashMap<(TokenId, TokenId), (u32, TokenId)>,
    byte_tokens: [Option<TokenId>; 256],
    pattern: String,
    pretokenizer: Regex,
    trie: TokenTrie,
}

impl fmt::Debug for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenizerSpec")
            .field("vocab_size", &self.tokens.len())
            .field("merges", &self.merges.len())
            .field("byte_coverage", &self.has_byte_coverage())
            .field("pattern", &self.pattern)
            .finish()
    }
}

impl TokenizerSpec {
    /// Builds a tokenizer from raw token byte strings (id = position) and merge
    /// pairs given as raw bytes, using the GPT-2 pre-tokenizer.
    pub fn from_tokens<T, A, B>(tokens: impl IntoIterator<Item = T>, merges: &[(A, B)]) -> Result<Self>
    where
        T: AsRef<[u8]>,
        A: AsRef<[u8]>,
        B: AsRef<[u8]>,
    {
        let tokens: Vec<Vec<u8>> = tokens.into_iter().map(|t| t.as_ref().to_vec()).collect();
        let merges: Vec<(Vec<u8>, Vec<u8>)> = merges
            .iter()
            .map(|(a, b)| (a.as_ref().to_vec(), b.as_ref().to_vec()))
            .collect();
        Self::build(tokens, &merges, GPT2_PATTERN)
    }

    /// A vocabulary of exactly the 256 single bytes and no merges.
    pub fn single_bytes() -> Self {
        Self::from_tokens((0..=255u8).map(|b| [b]), &[] as &[(&[u8], &[u8])])
            .expect("single-byte vocabulary is valid")
    }

    /// Loads a GPT-2 format `vocab.json` and `merges.txt`.
    pub fn load(vocab_file: impl AsRef<Path>, merges_file: impl AsRef<Path>) -> Result<Self> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })
        };
        let vocab = read(vocab_file.as_ref())?;
        let merges = read(merges_file.as_ref())?;
        Self::from_gpt2_strings(&vocab, &merges)
    }

    /// Parses the contents of a GPT-2 format vocab (JSON) and merges (text) file.
    pub fn from_gpt2_strings(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let merge_lines: Vec<&str> = merges_txt.lines().collect();
        Self::from_gpt2_parts(vocab_json, &merge_lines)
    }

    pub(crate) fn from_gpt2_parts(vocab_json: &str, merge_lines: &[&str]) -> Result<Self> {
        let vocab: HashMap<String, u64> = serde_json::from_str(vocab_json)
            .map_err(|e| Error::MalformedTokenizer(format!("vocab: {e}")))?;
        let size = vocab.len();
        let mut tokens: Vec<Option<Vec<u8>>> = vec![None; size];
        for (text, &id) in &vocab {
            let slot = usize::try_from(id)
                .ok()
                .filter(|&i| i < size)
                .ok_or_else(|| Error::MalformedTokenizer(format!("token id {id} not in [0, {size})")))?;
            if tokens[slot].is_some() {
                return Err(Error::MalformedTokenizer(format!("duplicate token id {id}")));
            }
            let bytes = byte_level::decode_str(text).ok_or_else(|| {
                Error::MalformedTokenizer(format!("token {text:?} uses characters outside the byte alphabet"))
            })?;
            tokens[slot] = Some(bytes);
        }
        // Ids are unique and in range, so every slot is filled.
        let tokens: Vec<Vec<u8>> = tokens.into_iter().map(Option::unwrap).collect();

        let mut merges = Vec::new();
        for (lineno, line) in merge_lines.iter().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || (lineno == 0 && line.starts_with("#version")) {
                continue;
            }
            let mut parts = line.split(' ');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::MalformedTokenizer(format!(
                    "merges line {}: expected two space-separated symbols, got {line:?}",
                    lineno + 1
                )));
            };
            let decode = |s: &str| {
                byte_level::decode_str(s).ok_or_else(|| {
                    Error::MalformedTokenizer(format!("merges line {}: bad symbol {s:?}", lineno + 1))
                })
            };
            merges.push((decode(a)?, decode(b)?));
        }
        Self::build(tokens, &merges, GPT2_PATTERN)
    }

    fn build(tokens: Vec<Vec<u8>>, merges: &[(Vec<u8>, Vec<u8>)], pattern: &str) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        let mut trie = TokenTrie::new();
        let mut byte_tokens = [None; 256];
        for (i, tok) in tokens.iter().enumerate() {
            let id = TokenId::try_from(i)
                .map_err(|_| Error::MalformedTokenizer("vocabulary too large".into()))?;
            if tok.is_empty() {
                return Err(Error::MalformedTokenizer(format!("token id {id} is empty")));
            }
            if ids.insert(tok.clone(), id).is_some() {
                return Err(Error::MalformedTokenizer(format!(
                    "token {:?} appears twice",
                    byte_level::encode_bytes(tok)
                )));
            }
            if let [b] = tok.as_slice() {
                byte_tokens[*b as usize] = Some(id);
            }
            trie.insert(tok, id);
        }

        let mut merge_table = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let lookup = |t: &[u8]| {
                ids.get(t).copied().ok_or_else(|| {
                    Error::MalformedTokenizer(format!(
                        "merge {} {} references unknown token {:?}",
                        byte_level::encode_bytes(a),
                        byte_level::encode_bytes(b),
                        byte_level::encode_bytes(t)
                    ))
                })
            };
            let merged = [a.as_slice(), b.as_slice()].concat();
            let key = (lookup(a)?, lookup(b)?);
            // First occurrence wins, as in the reference implementation.
            merge_table.entry(key).or_insert((rank as u32, lookup(&merged)?));
        }

        let pretokenizer = Regex::new(pattern)
            .map_err(|e| Error::InvalidArgument(format!("pre-tokenizer pattern: {e}")))?;

        let spec = TokenizerSpec {
            tokens,
            ids,
            merges: merge_table,
            byte_tokens,
            pattern: pattern.to_string(),
            pretokenizer,
            trie,
        };
        if !spec.has_byte_coverage() {
            log::warn!(
                "vocabulary lacks {} single-byte tokens; some spans will be untokenizable",
                spec.byte_tokens.iter().filter(|t| t.is_none()).count()
            );
        }
        Ok(spec)
    }

    /// Replaces the pre-tokenizer regex (GPT-2's pattern by default).
    pub fn with_pretokenizer(mut self, pattern: &str) -> Result<Self> {
        self.pretokenizer = Regex::new(pattern)
            .map_err(|e| Error::InvalidArgument(format!("pre-tokenizer pattern: {e}")))?;
        self.pattern = pattern.to_string();
        Ok(self)
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn pretokenizer_pattern(&self) -> &str {
        &self.pattern
    }

    /// True when every one of the 256 bytes is itself a token, which guarantees
    /// that every byte string has at least one tokenization.
    pub fn has_byte_coverage(&self) -> bool {
        self.byte_tokens.iter().all(Option::is_some)
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn token_id(&self, bytes: &[u8]) -> Option<TokenId> {
        self.ids.get(bytes).copied()
    }

    /// Concatenated bytes of `ids`. Panics on an id outside the vocabulary.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<u8> {
        ids.iter().flat_map(|&id| self.tokens[id as usize].iter().copied()).collect()
    }

    /// Tokens that are prefixes of `text[pos..]`, as `(id, byte length)`.
    pub fn matches_at<'a>(&'a self, text: &'a [u8], pos: usize) -> impl Iterator<Item = (TokenId, usize)> + 'a {
        self.trie.prefixes(&text[pos..])
    }

    /// Vocab JSON (token string -> id) in GPT-2 format.
    pub fn vocab_json(&self) -> String {
        let map: std::collections::BTreeMap<String, TokenId> = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (byte_level::encode_bytes(t), i as TokenId))
            .collect();
        serde_json::to_string(&map).expect("string map serializes")
    }

    /// Merge lines in rank order, GPT-2 format, without the version header.
    pub fn merge_lines(&self) -> Vec<String> {
        let mut ranked: Vec<_> = self.merges.iter().map(|(&(a, b), &(rank, _))| (rank, a, b)).collect();
        ranked.sort_unstable();
        ranked
            .into_iter()
            .map(|(_, a, b)| {
                format!(
                    "{} {}",
                    byte_level::encode_bytes(&self.tokens[a as usize]),
                    byte_level::encode_bytes(&self.tokens[b as usize])
                )
            })
            .collect()
    }

    /// Splits `text` into pre-tokenizer chunks (byte ranges).
    ///
    /// The regex runs over maximal valid UTF-8 runs; each invalid byte sequence
    /// becomes a chunk of its own.
    pub fn pretokenize(&self, text: &[u8]) -> Vec<std::ops::Range<usize>> {
        let mut chunks = Vec::new();
        let mut offset = 0;
        let mut rest = text;
        while !rest.is_empty() {
            let (valid, invalid_len) = match std::str::from_utf8(rest) {
                Ok(s) => (s, 0),
                Err(e) => {
                    let valid = std::str::from_utf8(&rest[..e.valid_up_to()]).expect("valid prefix");
                    let bad = e.error_len().unwrap_or(rest.len() - e.valid_up_to());
                    (valid, bad)
                }
            };
            let mut covered = 0;
            for m in self.pretokenizer.find_iter(valid) {
                let Ok(m) = m else { break };
                if m.start() > covered {
                    chunks.push(offset + covered..offset + m.start());
                }
                if m.end() > m.start() {
                    chunks.push(offset + m.start()..offset + m.end());
                }
                covered = m.end();
            }
            if covered < valid.len() {
                chunks.push(offset + covered..offset + valid.len());
            }
            offset += valid.len();
            if invalid_len > 0 {
                chunks.push(offset..offset + invalid_len);
                offset += invalid_len;
            }
            rest = &text[offset..];
        }
        chunks
    }

    /// The default tokenization: lowest-rank-first pairwise merging within
    /// each pre-tokenizer chunk.
    pub fn default_tokenize(&self, text: &[u8]) -> Result<Tokenization> {
        let mut out = Vec::with_capacity(text.len() / 3 + 1);
        for chunk in self.pretokenize(text) {
            self.bpe_chunk(&text[chunk], &mut out)?;
        }
        Ok(Tokenization(out))
    }

    fn bpe_chunk(&self, chunk: &[u8], out: &mut Vec<TokenId>) -> Result<()> {
        let mut word: Vec<TokenId> = chunk
            .iter()
            .map(|&b| self.byte_tokens[b as usize].ok_or(Error::UnrepresentableByte(b)))
            .collect::<Result<_>>()?;
        loop {
            let best = word
                .windows(2)
                .filter_map(|w| self.merges.get(&(w[0], w[1])).map(|&(rank, merged)| (rank, w[0], w[1], merged)))
                .min_by_key(|&(rank, ..)| rank);
            let Some((_, left, right, merged)) = best else { break };
            let mut next = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == left && word[i + 1] == right {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(word[i]);
                    i += 1;
                }
            }
            word = next;
        }
        out.extend(word);
        Ok(())
    }

    /// All tokenizations of `span` whose tokens lie inside it, fewest tokens
    /// first (ties in lexicographic id order), truncated to `max_candidates`.
    pub fn enumerate_tokenizations(&self, span: &[u8], max_candidates: usize) -> Result<CandidateSet> {
        enumerate::enumerate(self, span, max_candidates)
    }
}
