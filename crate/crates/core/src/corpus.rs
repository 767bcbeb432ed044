//! Building evaluation sequences from raw documents.
//!
//! Documents are packed greedily, joined by a blank line, into sequences of
//! roughly `target_tokens` default tokens. A document longer than the target
//! is clipped to fit.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizerSpec;

pub const DOCUMENT_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub text: String,
    /// Indices of the documents packed into this sequence.
    pub sources: Vec<usize>,
}

/// Reads documents from a file: one JSON object per line with a `text`
/// field for `.jsonl` files, otherwise the whole file is one document.
pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    if path.extension().is_some_and(|e| e == "jsonl") {
        #[derive(Deserialize)]
        struct Line {
            text: String,
        }
        let file = std::fs::File::open(path).map_err(io_err)?;
        let mut docs = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            docs.push(serde_json::from_str::<Line>(&line)?.text);
        }
        Ok(docs)
    } else {
        std::fs::read_to_string(path).map(|t| vec![t]).map_err(io_err)
    }
}

fn token_count(spec: &TokenizerSpec, text: &str) -> Result<usize> {
    Ok(spec.default_tokenize(text.as_bytes())?.len())
}

/// Longest prefix of `text`, cut at a character boundary, whose default
/// tokenization has at most `target` tokens.
fn clip(spec: &TokenizerSpec, text: &str, target: usize) -> Result<String> {
    let ids = spec.default_tokenize(text.as_bytes())?;
    if ids.len() <= target {
        return Ok(text.to_string());
    }
    let mut len = spec.decode(&ids.ids()[..target]).len();
    loop {
        let mut end = len.min(text.len());
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        let candidate = &text[..end];
        // Re-tokenizing a cut can merge differently; shrink until it fits.
        let shorter = spec.default_tokenize(candidate.as_bytes())?;
        if shorter.len() <= target {
            return Ok(candidate.to_string());
        }
        len = spec.decode(&shorter.ids()[..target]).len();
    }
}

/// Packs `documents` greedily into sequences of at most `target_tokens`
/// default tokens.
pub fn build_sequences<T: AsRef<str>>(
    spec: &TokenizerSpec,
    documents: &[T],
    target_tokens: usize,
) -> Result<Vec<SequenceRecord>> {
    if target_tokens == 0 {
        return Err(Error::InvalidArgument("target length must be positive".into()));
    }
    let mut out: Vec<SequenceRecord> = Vec::new();
    let mut text = String::new();
    let mut sources = Vec::new();
    let mut flush = |text: &mut String, sources: &mut Vec<usize>| {
        if !text.is_empty() {
            out.push(SequenceRecord {
                id: format!("seq-{:06}", out.len()),
                text: std::mem::take(text),
                sources: std::mem::take(sources),
            });
        }
    };
    for (index, doc) in documents.iter().enumerate() {
        let doc = doc.as_ref();
        if doc.trim().is_empty() {
            continue;
        }
        if !text.is_empty() {
            let joined = format!("{text}{DOCUMENT_SEPARATOR}{doc}");
            if token_count(spec, &joined)? <= target_tokens {
                text = joined;
                sources.push(index);
                continue;
            }
            flush(&mut text, &mut sources);
        }
        let clipped = clip(spec, doc, target_tokens)?;
        if clipped.is_empty() {
            continue;
        }
        text = clipped;
        sources.push(index);
    }
    flush(&mut text, &mut sources);
    Ok(out)
}
