use serde::{Deserialize, Serialize};

use super::{TokenId, Tokenization, TokenizerSpec};
use crate::error::{Error, Result};

/// The top-`M` tokenizations of a span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub span: Vec<u8>,
    /// Fewest tokens first; equal counts in lexicographic id order.
    pub candidates: Vec<Tokenization>,
    /// True iff the span has more than `M` tokenizations.
    pub truncated: bool,
    /// Number of tokenizations of the span (saturating).
    pub total: u128,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn position(&self, t: &Tokenization) -> Option<usize> {
        self.candidates.iter().position(|c| c == t)
    }
}

/// Set of achievable token counts from a lattice position to the end.
#[derive(Clone)]
struct CountSet(Vec<u64>);

impl CountSet {
    fn new(max: usize) -> Self {
        CountSet(vec![0; max / 64 + 1])
    }

    fn insert(&mut self, c: usize) {
        self.0[c / 64] |= 1 << (c % 64);
    }

    fn contains(&self, c: usize) -> bool {
        self.0.get(c / 64).is_some_and(|w| w & (1 << (c % 64)) != 0)
    }

    /// self |= other << 1
    fn union_shifted(&mut self, other: &CountSet) {
        let mut carry = 0u64;
        for (dst, &src) in self.0.iter_mut().zip(&other.0) {
            *dst |= (src << 1) | carry;
            carry = src >> 63;
        }
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64).filter(move |b| bits & (1 << b) != 0).map(move |b| w * 64 + b)
        })
    }
}

pub(super) fn enumerate(spec: &TokenizerSpec, span: &[u8], max_candidates: usize) -> Result<CandidateSet> {
    if span.is_empty() {
        return Err(Error::InvalidArgument("cannot enumerate an empty span".into()));
    }
    if max_candidates == 0 {
        return Err(Error::InvalidArgument("max candidates must be at least 1".into()));
    }
    let n = span.len();

    // Lattice edges per start position, sorted by token id.
    let edges: Vec<Vec<(TokenId, usize)>> = (0..n)
        .map(|pos| {
            let mut out: Vec<_> = spec.matches_at(span, pos).map(|(id, len)| (id, pos + len)).collect();
            out.sort_unstable();
            out
        })
        .collect();

    let mut counts = vec![CountSet::new(n); n + 1];
    let mut paths = vec![0u128; n + 1];
    counts[n].insert(0);
    paths[n] = 1;
    for pos in (0..n).rev() {
        let (head, tail) = counts.split_at_mut(pos + 1);
        for &(_, end) in &edges[pos] {
            head[pos].union_shifted(&tail[end - pos - 1]);
            paths[pos] = paths[pos].saturating_add(paths[end]);
        }
    }
    if paths[0] == 0 {
        return Err(Error::untokenizable(span));
    }

    let mut candidates = Vec::new();
    let mut stack = Vec::new();
    for target in counts[0].iter() {
        collect_exact(&edges, &counts, 0, target, &mut stack, &mut candidates, max_candidates);
        if candidates.len() >= max_candidates {
            break;
        }
    }

    Ok(CandidateSet {
        span: span.to_vec(),
        candidates,
        truncated: paths[0] > max_candidates as u128,
        total: paths[0],
    })
}

/// Depth-first walk over paths from `pos` with exactly `remaining` tokens, in
/// lexicographic id order, stopping once `limit` results are held.
fn collect_exact(
    edges: &[Vec<(TokenId, usize)>],
    counts: &[CountSet],
    pos: usize,
    remaining: usize,
    stack: &mut Vec<TokenId>,
    out: &mut Vec<Tokenization>,
    limit: usize,
) {
    if remaining == 0 {
        if pos == edges.len() {
            out.push(Tokenization(stack.clone()));
        }
        return;
    }
    if pos == edges.len() {
        return;
    }
    for &(id, end) in &edges[pos] {
        if out.len() >= limit {
            return;
        }
        if !counts[end].contains(remaining - 1) {
            continue;
        }
        stack.push(id);
        collect_exact(edges, counts, end, remaining - 1, stack, out, limit);
        stack.pop();
    }
}
