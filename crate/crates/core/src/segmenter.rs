//! Splitting a sequence into blocks of bounded byte length.
//!
//! Blocks roughly correspond to words: a run of separators is attached as a
//! prefix to the word that follows it. Words longer than the limit are cut
//! along their default tokenization (`T1`), and a single default token that is
//! itself longer than the limit is cropped (`T2`).

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tokenizer::{Tokenization, TokenizerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    /// A whole word (with its separator prefix) no longer than the limit.
    T0,
    /// A piece of a long word made of whole default tokens.
    T1,
    /// A piece of a long word that cuts through a default token.
    T2,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A contiguous byte span of a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub bytes: Vec<u8>,
    pub kind: BlockKind,
    pub span: Range<usize>,
    /// Reference tokenization used to flag default draws. For `T1` blocks this
    /// is the slice of the word's default tokenization, otherwise the default
    /// tokenization of the block's own bytes.
    pub default: Tokenization,
}

impl Block {
    pub fn text(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.bytes)
    }
}

/// Which bytes delimit words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SeparatorClass {
    /// ASCII space and `\n` only.
    #[default]
    SpaceNewline,
    /// All ASCII whitespace (adds `\t`, `\r`, vertical tab and form feed).
    AsciiWhitespace,
}

impl SeparatorClass {
    pub fn is_separator(self, b: u8) -> bool {
        match self {
            SeparatorClass::SpaceNewline => b == b' ' || b == b'\n',
            SeparatorClass::AsciiWhitespace => b.is_ascii_whitespace() || b == 0x0b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    /// Maximum block length `L`, in bytes.
    pub max_block_len: usize,
    pub separators: SeparatorClass,
}

impl SegmenterConfig {
    pub fn new(max_block_len: usize) -> Self {
        SegmenterConfig { max_block_len, separators: SeparatorClass::default() }
    }
}

/// Splits `s` into blocks of at most `max_block_len` bytes.
pub fn split_in_blocks(spec: &TokenizerSpec, s: &[u8], max_block_len: usize) -> Result<Vec<Block>> {
    split_in_blocks_with(spec, s, &SegmenterConfig::new(max_block_len))
}

pub fn split_in_blocks_with(spec: &TokenizerSpec, s: &[u8], config: &SegmenterConfig) -> Result<Vec<Block>> {
    let limit = config.max_block_len.max(1);
    let mut blocks = Vec::new();
    for unit in word_units(s, config.separators) {
        let bytes = &s[unit.clone()];
        if bytes.len() <= limit {
            blocks.push(Block {
                bytes: bytes.to_vec(),
                kind: BlockKind::T0,
                span: unit.clone(),
                default: spec.default_tokenize(bytes)?,
            });
        } else {
            split_long_unit(spec, s, unit, limit, &mut blocks)?;
        }
    }
    Ok(blocks)
}

/// Byte ranges of `[separators*][word+]` units. A separator run after the
/// last word is a unit of its own.
fn word_units(s: &[u8], class: SeparatorClass) -> Vec<Range<usize>> {
    let mut units = Vec::new();
    let mut start = 0;
    for i in 1..s.len() {
        if !class.is_separator(s[i - 1]) && class.is_separator(s[i]) {
            units.push(start..i);
            start = i;
        }
    }
    if start < s.len() {
        units.push(start..s.len());
    }
    units
}

struct Pending {
    start: usize,
    end: usize,
    kind: BlockKind,
    ids: Vec<u32>,
}

fn split_long_unit(
    spec: &TokenizerSpec,
    s: &[u8],
    unit: Range<usize>,
    limit: usize,
    blocks: &mut Vec<Block>,
) -> Result<()> {
    let default = spec.default_tokenize(&s[unit.clone()])?;
    let emit = |p: Pending, blocks: &mut Vec<Block>| -> Result<()> {
        let bytes = s[p.start..p.end].to_vec();
        let default = match p.kind {
            BlockKind::T1 => Tokenization(p.ids),
            _ => spec.default_tokenize(&bytes)?,
        };
        blocks.push(Block { bytes, kind: p.kind, span: p.start..p.end, default });
        Ok(())
    };

    let mut pending: Option<Pending> = None;
    let mut pos = unit.start;
    for &id in default.ids() {
        let len = spec.token_bytes(id).expect("id from tokenizer").len();
        if len <= limit {
            match pending.as_mut() {
                Some(p) if p.end - p.start + len <= limit => {
                    p.end += len;
                    p.ids.push(id);
                }
                _ => {
                    if let Some(p) = pending.take() {
                        emit(p, blocks)?;
                    }
                    pending = Some(Pending { start: pos, end: pos + len, kind: BlockKind::T1, ids: vec![id] });
                }
            }
        } else {
            if let Some(p) = pending.take() {
                emit(p, blocks)?;
            }
            let token_end = pos + len;
            let mut cut = pos;
            while token_end - cut > limit {
                emit(Pending { start: cut, end: cut + limit, kind: BlockKind::T2, ids: Vec::new() }, blocks)?;
                cut += limit;
            }
            // The remainder of the cropped token starts a new block.
            pending = Some(Pending { start: cut, end: token_end, kind: BlockKind::T2, ids: Vec::new() });
        }
        pos += len;
    }
    if let Some(p) = pending {
        emit(p, blocks)?;
    }
    debug_assert_eq!(pos, unit.end);
    Ok(())
}

/// The longest default-tokenization token (in bytes) over `corpus`; at least 1.
///
/// Using this as the block limit guarantees no `T2` blocks on the corpus.
pub fn recommend_block_len<T: AsRef<[u8]>>(spec: &TokenizerSpec, corpus: &[T]) -> Result<usize> {
    let mut best = 1;
    for text in corpus {
        let t = spec.default_tokenize(text.as_ref())?;
        for &id in t.ids() {
            best = best.max(spec.token_bytes(id).map_or(0, <[u8]>::len));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(blocks: &[Block]) -> Vec<String> {
        blocks.iter().map(|b| b.text().into_owned()).collect()
    }

    fn kinds(blocks: &[Block]) -> Vec<BlockKind> {
        blocks.iter().map(|b| b.kind).collect()
    }

    #[test]
    fn short_words_are_t0() {
        let spec = TokenizerSpec::single_bytes();
        let blocks = split_in_blocks(&spec, b"It's Friday today", 9).unwrap();
        assert_eq!(texts(&blocks), vec!["It's", " Friday", " today"]);
        assert_eq!(kinds(&blocks), vec![BlockKind::T0; 3]);
        assert_eq!(blocks[1].span, 4..11);
    }

    #[test]
    fn separator_runs_attach_forward() {
        let spec = TokenizerSpec::single_bytes();
        let blocks = split_in_blocks(&spec, b"\n\n a  b\n\nc \n", 20).unwrap();
        assert_eq!(texts(&blocks), vec!["\n\n a", "  b", "\n\nc", " \n"]);
    }

    #[test]
    fn empty_sequence_has_no_blocks() {
        let spec = TokenizerSpec::single_bytes();
        assert!(split_in_blocks(&spec, b"", 5).unwrap().is_empty());
    }

    fn piece_spec() -> TokenizerSpec {
        // Default tokenization of the word is [abcde][fghi][jklmn].
        let mut tokens: Vec<Vec<u8>> = (b'a'..=b'z').map(|b| vec![b]).collect();
        let mut merges = Vec::new();
        for piece in ["abcde", "fghi", "jklmn"] {
            let p = piece.as_bytes();
            for k in 2..=p.len() {
                tokens.push(p[..k].to_vec());
                merges.push((p[..k - 1].to_vec(), vec![p[k - 1]]));
            }
        }
        TokenizerSpec::from_tokens(tokens, &merges).unwrap()
    }

    #[test]
    fn long_word_is_cut_along_default_tokens() {
        let spec = piece_spec();
        let word = b"abcdefghijklmn";
        let d = spec.default_tokenize(word).unwrap();
        let pieces: Vec<_> = d.ids().iter().map(|&i| spec.token_bytes(i).unwrap().to_vec()).collect();
        assert_eq!(pieces, vec![b"abcde".to_vec(), b"fghi".to_vec(), b"jklmn".to_vec()]);

        let blocks = split_in_blocks(&spec, word, 9).unwrap();
        assert_eq!(texts(&blocks), vec!["abcdefghi", "jklmn"]);
        assert_eq!(kinds(&blocks), vec![BlockKind::T1, BlockKind::T1]);
        assert_eq!(blocks[0].default.ids(), &d.ids()[..2]);
    }

    #[test]
    fn over_long_token_is_cropped() {
        let mut tokens: Vec<Vec<u8>> = (b'a'..=b'z').map(|b| vec![b]).collect();
        let word = b"abcdefghijkl";
        let mut merges = Vec::new();
        for k in 2..=word.len() {
            tokens.push(word[..k].to_vec());
            merges.push((word[..k - 1].to_vec(), vec![word[k - 1]]));
        }
        let spec = TokenizerSpec::from_tokens(tokens, &merges).unwrap();
        assert_eq!(spec.default_tokenize(word).unwrap().len(), 1);

        let blocks = split_in_blocks(&spec, word, 9).unwrap();
        assert_eq!(texts(&blocks), vec!["abcdefghi", "jkl"]);
        assert_eq!(blocks[0].kind, BlockKind::T2);
        assert_eq!(blocks[0].bytes.len(), 9);
        assert_eq!(blocks[1].bytes.len(), 3);
        assert_eq!(blocks[1].kind, BlockKind::T2);
    }

    #[test]
    fn cropped_remainder_absorbs_following_tokens() {
        let spec = TokenizerSpec::from_tokens(
            ["a", "b", "c", "aa", "aaaa"],
            &[("a", "a"), ("aa", "aa")],
        )
        .unwrap();
        // [aaaa][b][c] with L = 3: crop "aaa", then "a" + "b" + "c" = 3 bytes.
        let blocks = split_in_blocks(&spec, b"aaaabc", 3).unwrap();
        assert_eq!(texts(&blocks), vec!["aaa", "abc"]);
        assert_eq!(kinds(&blocks), vec![BlockKind::T2, BlockKind::T2]);
    }

    #[test]
    fn recommend_len_examples() {
        let cab = TokenizerSpec::from_tokens(["a", "ab", "b", "c", "ca", "cab"], &[("c", "a"), ("a", "b"), ("ca", "b")])
            .unwrap();
        assert_eq!(recommend_block_len(&cab, &["cab"]).unwrap(), 3);
        let single = TokenizerSpec::single_bytes();
        assert_eq!(recommend_block_len(&single, &["hello world", "x"]).unwrap(), 1);
    }

    #[test]
    fn widened_separators_split_on_tabs() {
        let spec = TokenizerSpec::single_bytes();
        let cfg = SegmenterConfig { max_block_len: 10, separators: SeparatorClass::AsciiWhitespace };
        let blocks = split_in_blocks_with(&spec, b"a\tb c", &cfg).unwrap();
        assert_eq!(texts(&blocks), vec!["a", "\tb", " c"]);
        let blocks = split_in_blocks(&spec, b"a\tb c", 10).unwrap();
        assert_eq!(texts(&blocks), vec!["a\tb", " c"]);
    }
}
