//! Dynamic draft trees and their packed (flattened) form.
//!
//! Trees grow best-first: every materialized node offers its `branch_k` most
//! likely continuations as candidates, valued by the product of confidences
//! along the root path, and the single highest-valued candidate is
//! materialized next.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{NGramModel, Token};

/// Padding value in `retrieve_indices`.
pub const PAD: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub total_nodes: usize,
    pub max_depth: usize,
    pub branch_k: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            total_nodes: 15,
            max_depth: 5,
            branch_k: 4,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.total_nodes == 0 || self.max_depth == 0 || self.branch_k == 0 {
            return Err(Error::InvalidParameter(format!(
                "tree parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftNode {
    /// `None` only for the root.
    pub parent: Option<usize>,
    pub token: Token,
    /// Drafter probability of `token` given the node's path prefix.
    pub confidence: f64,
    pub depth: usize,
    /// Entropy (nats) of the drafter distribution this node was drawn from.
    pub draft_entropy: f64,
}

/// Speculation tree. `nodes[0]` is the root carrying the last committed token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftTree {
    nodes: Vec<DraftNode>,
}

impl DraftTree {
    pub fn new(root_token: Token) -> Self {
        Self {
            nodes: vec![DraftNode {
                parent: None,
                token: root_token,
                confidence: 1.0,
                depth: 0,
                draft_entropy: 0.0,
            }],
        }
    }

    /// Appends a child and returns its id.
    pub fn push(&mut self, parent: usize, token: Token, confidence: f64, draft_entropy: f64) -> Result<usize> {
        let depth = self.nodes.get(parent).ok_or(Error::InvalidNode(parent))?.depth + 1;
        if !(confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "confidence {confidence} outside (0, 1]"
            )));
        }
        self.nodes.push(DraftNode {
            parent: Some(parent),
            token,
            confidence,
            depth,
            draft_entropy,
        });
        Ok(self.nodes.len() - 1)
    }

    pub fn root_token(&self) -> Token {
        self.nodes[0].token
    }

    pub fn nodes(&self) -> &[DraftNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Result<&DraftNode> {
        self.nodes.get(id).ok_or(Error::InvalidNode(id))
    }

    /// Number of non-root nodes.
    pub fn size(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Node ids from the root's child down to `id` inclusive.
    pub fn path(&self, id: usize) -> Result<Vec<usize>> {
        let mut path = Vec::new();
        let mut cur = id;
        self.node(id)?;
        while let Some(parent) = self.nodes[cur].parent {
            path.push(cur);
            cur = parent;
        }
        path.reverse();
        Ok(path)
    }

    pub fn path_tokens(&self, id: usize) -> Result<Vec<Token>> {
        Ok(self.path(id)?.into_iter().map(|i| self.nodes[i].token).collect())
    }

    pub fn children(&self, id: usize) -> Vec<usize> {
        (id + 1..self.nodes.len())
            .filter(|c| self.nodes[*c].parent == Some(id))
            .collect()
    }
}

/// Product of confidences along the root path; the root contributes 1.
pub fn path_value(tree: &DraftTree, node_id: usize) -> Result<f64> {
    Ok(tree
        .path(node_id)?
        .into_iter()
        .map(|i| tree.nodes[i].confidence)
        .product())
}

#[derive(Debug, Clone)]
struct Candidate {
    value: f64,
    parent: usize,
    token: Token,
    confidence: f64,
    draft_entropy: f64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // max-heap: larger value first, then lower token id, then lower parent id
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.token.cmp(&self.token))
            .then_with(|| other.parent.cmp(&self.parent))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Grows a draft tree from the last token of `prefix`.
pub fn build_draft_tree(drafter: &NGramModel, prefix: &[Token], params: TreeParams) -> Result<DraftTree> {
    params.validate()?;
    if prefix.len() < drafter.order() {
        return Err(Error::PrefixTooShort {
            needed: drafter.order(),
            got: prefix.len(),
        });
    }
    let root = *prefix.last().ok_or(Error::PrefixTooShort { needed: 1, got: 0 })?;
    let mut tree = DraftTree::new(root);
    let mut frontier = BinaryHeap::new();
    let mut context = prefix.to_vec();

    let mut offer = |tree: &DraftTree, node: usize, frontier: &mut BinaryHeap<Candidate>| -> Result<()> {
        if tree.nodes[node].depth >= params.max_depth {
            return Ok(());
        }
        context.truncate(prefix.len());
        context.extend(tree.path_tokens(node)?);
        let dist = drafter.next_distribution(&context)?;
        let h = dist.entropy();
        let base = path_value(tree, node)?;
        for token in dist.ranked().into_iter().take(params.branch_k) {
            let p = dist.prob(token);
            if p <= 0.0 {
                break;
            }
            frontier.push(Candidate {
                value: base * p,
                parent: node,
                token,
                confidence: p,
                draft_entropy: h,
            });
        }
        Ok(())
    };

    offer(&tree, 0, &mut frontier)?;
    while tree.size() < params.total_nodes {
        let Some(best) = frontier.pop() else { break };
        let id = tree.push(best.parent, best.token, best.confidence, best.draft_entropy)?;
        offer(&tree, id, &mut frontier)?;
    }
    Ok(tree)
}

/// Per-node draft-side data carried alongside a packed tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeAnnotation {
    pub confidence: f64,
    pub draft_entropy: f64,
}

/// Flattened tree as consumed by a verifier pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedTree {
    pub tokens: Vec<Token>,
    /// Row attends to column.
    pub mask: Vec<Vec<u8>>,
    pub positions: Vec<usize>,
    pub retrieve_indices: Vec<Vec<i64>>,
    /// Empty for trees deserialized from JSON.
    #[serde(skip)]
    pub annotations: Vec<NodeAnnotation>,
}

impl PackedTree {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Parent of every node, recovered from the mask: the visible node one
    /// position shallower. The root has none.
    pub fn parents(&self) -> Result<Vec<Option<usize>>> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::MalformedTree("no root".into()));
        }
        if self.mask.len() != n || self.mask.iter().any(|r| r.len() != n) || self.positions.len() != n {
            return Err(Error::MalformedTree("mask or positions have the wrong shape".into()));
        }
        if self.positions[0] != 0 {
            return Err(Error::MalformedTree("root position is not 0".into()));
        }
        let mut parents = vec![None; n];
        for i in 1..n {
            if self.positions[i] == 0 {
                return Err(Error::MalformedTree(format!("node {i} has position 0")));
            }
            let mut found = None;
            for j in 0..n {
                if j != i && self.mask[i][j] == 1 && self.positions[j] + 1 == self.positions[i] {
                    if found.is_some() {
                        return Err(Error::MalformedTree(format!("node {i} has two parents")));
                    }
                    found = Some(j);
                }
            }
            parents[i] = Some(found.ok_or_else(|| Error::MalformedTree(format!("node {i} has no parent")))?);
        }
        Ok(parents)
    }

    /// Visible non-root nodes of `i` (mask row), ordered by position.
    pub fn visible_path(&self, i: usize) -> Vec<usize> {
        let mut seen: Vec<usize> = (1..self.tokens.len())
            .filter(|j| self.mask[i][*j] == 1)
            .collect();
        seen.sort_by_key(|j| self.positions[*j]);
        seen
    }

    pub fn annotation(&self, i: usize) -> NodeAnnotation {
        self.annotations.get(i).copied().unwrap_or(NodeAnnotation {
            confidence: 1.0,
            draft_entropy: 0.0,
        })
    }
}

/// Flattens a tree: node-id order, ancestor-closure mask, depth positions and
/// one retrieve row per leaf.
pub fn pack_tree(tree: &DraftTree) -> PackedTree {
    let n = tree.nodes.len();
    let mut mask = vec![vec![0u8; n]; n];
    for i in 0..n {
        let mut cur = Some(i);
        while let Some(c) = cur {
            mask[i][c] = 1;
            cur = tree.nodes[c].parent;
        }
    }
    let mut has_child = vec![false; n];
    for node in &tree.nodes[1..] {
        if let Some(p) = node.parent {
            has_child[p] = true;
        }
    }
    let width = tree.depth() + 1;
    let retrieve_indices = (0..n)
        .filter(|i| !has_child[*i])
        .map(|leaf| {
            let mut row = vec![0i64];
            row.extend(tree.path(leaf).unwrap_or_default().into_iter().map(|i| i as i64));
            row.resize(width, PAD);
            row
        })
        .collect();
    PackedTree {
        tokens: tree.nodes.iter().map(|n| n.token).collect(),
        mask,
        positions: tree.nodes.iter().map(|n| n.depth).collect(),
        retrieve_indices,
        annotations: tree
            .nodes
            .iter()
            .map(|n| NodeAnnotation {
                confidence: n.confidence,
                draft_entropy: n.draft_entropy,
            })
            .collect(),
    }
}
