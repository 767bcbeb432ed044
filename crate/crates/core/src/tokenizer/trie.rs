use super::TokenId;

#[derive(Debug, Clone, Default)]
struct Node {
    // Sorted by byte.
    children: Vec<(u8, u32)>,
    token: Option<TokenId>,
}

/// Prefix trie over token byte strings.
#[derive(Debug, Clone)]
pub(crate) struct TokenTrie {
    nodes: Vec<Node>,
}

impl TokenTrie {
    pub(crate) fn new() -> Self {
        TokenTrie { nodes: vec![Node::default()] }
    }

    pub(crate) fn insert(&mut self, bytes: &[u8], id: TokenId) {
        let mut cur = 0usize;
        for &b in bytes {
            cur = match self.nodes[cur].children.binary_search_by_key(&b, |&(c, _)| c) {
                Ok(i) => self.nodes[cur].children[i].1 as usize,
                Err(i) => {
                    let next = self.nodes.len();
                    self.nodes.push(Node::default());
                    self.nodes[cur].children.insert(i, (b, next as u32));
                    next
                }
            };
        }
        self.nodes[cur].token = Some(id);
    }

    /// Every token that is a prefix of `text`, as `(id, byte length)`, shortest first.
    pub(crate) fn prefixes<'a>(&'a self, text: &'a [u8]) -> impl Iterator<Item = (TokenId, usize)> + 'a {
        let mut cur = Some(0usize);
        let mut depth = 0usize;
        std::iter::from_fn(move || loop {
            let node = &self.nodes[cur?];
            let here = depth;
            cur = text.get(depth).and_then(|b| {
                node.children
                    .binary_search_by_key(b, |&(c, _)| c)
                    .ok()
                    .map(|i| node.children[i].1 as usize)
            });
            depth += 1;
            if here > 0 {
                if let Some(id) = node.token {
                    return Some((id, here));
                }
            }
        })
    }
}
