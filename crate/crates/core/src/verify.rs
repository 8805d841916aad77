//! Verifier pass and lossless acceptance over a packed draft tree.
//!
//! The verifier computes, for every packed node, the target distribution
//! conditioned on the committed prefix and the node's visible path. Greedy
//! verification then follows argmax matches; sampling verification runs
//! sequential rejection over each node's children in descending draft
//! confidence.
//!
//! Children of a draft tree are the drafter's top-ranked tokens, chosen
//! deterministically, so each child's proposal law is a point mass on its
//! token. Accepting with `min(1, q(x) / 1)` and rejecting into
//! `norm(max(0, q - onehot(x)))` therefore keeps the committed token
//! distributed exactly as `q`, for any number of children and for duplicated
//! tokens across merged subtrees.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{argmax_token, sample, Categorical, NGramModel, Token};
use crate::tree::PackedTree;

const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: usize,
    pub depth: usize,
    pub accepted: bool,
    pub draft_confidence: f64,
    pub draft_entropy: f64,
    pub verifier_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationOutcome {
    /// Accepted non-root nodes, root side first.
    pub accepted_node_ids: Vec<usize>,
    pub accepted_length: usize,
    pub bonus_token: Token,
    pub records: Vec<NodeRecord>,
}

impl VerificationOutcome {
    /// Tokens to commit: the accepted drafts followed by the bonus token.
    pub fn committed_tokens(&self, packed: &PackedTree) -> Vec<Token> {
        let mut out: Vec<Token> = self
            .accepted_node_ids
            .iter()
            .map(|i| packed.tokens[*i])
            .collect();
        out.push(self.bonus_token);
        out
    }
}

/// Target conditional at every packed node, built only from the node's
/// visible set (root plus ancestors by mask).
pub fn node_conditionals(
    target: &NGramModel,
    committed_prefix: &[Token],
    packed: &PackedTree,
) -> Result<Vec<Categorical>> {
    match (committed_prefix.last(), packed.tokens.first()) {
        (Some(last), Some(root)) if last == root => {}
        _ => return Err(Error::RootMismatch),
    }
    if committed_prefix.len() < target.order() {
        return Err(Error::PrefixTooShort {
            needed: target.order(),
            got: committed_prefix.len(),
        });
    }
    let mut context = committed_prefix.to_vec();
    (0..packed.len())
        .map(|i| {
            context.truncate(committed_prefix.len());
            context.extend(packed.visible_path(i).into_iter().map(|j| packed.tokens[j]));
            target.next_distribution(&context)
        })
        .collect()
}

/// `min(1, q / p)`.
pub fn accept_probability(q_prob: f64, p_prob: f64) -> Result<f64> {
    if !(p_prob > 0.0) {
        return Err(Error::ZeroDraftProbability);
    }
    Ok((q_prob / p_prob).min(1.0))
}

/// `norm(max(0, q - p))`, falling back to `q` when the residual has no mass.
pub fn residual_distribution(q: &Categorical, p: &Categorical) -> Categorical {
    let weights: Vec<f64> = q
        .probs()
        .iter()
        .zip(p.probs())
        .map(|(a, b)| (a - b).max(0.0))
        .collect();
    let mass: f64 = weights.iter().sum();
    if mass < RESIDUAL_FLOOR {
        return q.clone();
    }
    Categorical::from_weights(weights).unwrap_or_else(|_| q.clone())
}

struct Topology {
    parents: Vec<Option<usize>>,
    /// Children in visit order: descending confidence, then token id, then node id.
    children: Vec<Vec<usize>>,
}

fn topology(packed: &PackedTree) -> Result<Topology> {
    let parents = packed.parents()?;
    let mut children = vec![Vec::new(); packed.len()];
    for (i, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(i);
        }
    }
    for kids in &mut children {
        kids.sort_by(|a, b| {
            packed
                .annotation(*b)
                .confidence
                .total_cmp(&packed.annotation(*a).confidence)
                .then(packed.tokens[*a].cmp(&packed.tokens[*b]))
                .then(a.cmp(b))
        });
    }
    Ok(Topology { parents, children })
}

fn record(packed: &PackedTree, node: usize, accepted: bool, parent_cond: &Categorical) -> NodeRecord {
    let ann = packed.annotation(node);
    NodeRecord {
        node_id: node,
        depth: packed.positions[node],
        accepted,
        draft_confidence: ann.confidence,
        draft_entropy: ann.draft_entropy,
        verifier_entropy: parent_cond.entropy(),
    }
}

/// Temperature-0 verification. A child is accepted iff its token is the
/// target argmax at its parent. When several children match (duplicated
/// tokens across merged subtrees) the one leading to the longest accepted
/// path wins.
///
/// Children are evaluated in the same order as in [`verify_sampling`] and
/// evaluation at a node stops at the accepted child, so `records` holds the
/// children tried before it and the child itself.
pub fn verify_greedy(
    target: &NGramModel,
    committed_prefix: &[Token],
    packed: &PackedTree,
) -> Result<VerificationOutcome> {
    let conds = node_conditionals(target, committed_prefix, packed)?;
    let topo = topology(packed)?;
    let argmax: Vec<Token> = conds.iter().map(argmax_token).collect();

    // ids are topological, so a reverse sweep sees children first
    let mut run = vec![0usize; packed.len()];
    for i in (0..packed.len()).rev() {
        run[i] = topo.children[i]
            .iter()
            .filter(|c| packed.tokens[**c] == argmax[i])
            .map(|c| 1 + run[*c])
            .max()
            .unwrap_or(0);
    }

    let mut cur = 0;
    let mut accepted = Vec::new();
    let mut records = Vec::new();
    loop {
        let chosen = topo.children[cur]
            .iter()
            .copied()
            .find(|c| packed.tokens[*c] == argmax[cur] && 1 + run[*c] == run[cur]);
        for &c in &topo.children[cur] {
            records.push(record(packed, c, Some(c) == chosen, &conds[cur]));
            if Some(c) == chosen {
                break;
            }
        }
        match chosen {
            Some(c) => {
                accepted.push(c);
                cur = c;
            }
            None => break,
        }
    }
    debug_assert!(accepted
        .iter()
        .zip(std::iter::once(&0).chain(accepted.iter()))
        .all(|(c, p)| topo.parents[*c] == Some(*p)));
    Ok(VerificationOutcome {
        accepted_length: accepted.len(),
        accepted_node_ids: accepted,
        bonus_token: argmax[cur],
        records,
    })
}

/// Temperature-1 verification by sequential rejection over point-mass
/// proposals; the committed tokens are distributed exactly as the target's.
pub fn verify_sampling<R: Rng + ?Sized>(
    target: &NGramModel,
    committed_prefix: &[Token],
    packed: &PackedTree,
    rng: &mut R,
) -> Result<VerificationOutcome> {
    let conds = node_conditionals(target, committed_prefix, packed)?;
    let topo = topology(packed)?;
    let vocab = target.vocab().size();

    let mut cur = 0;
    let mut accepted = Vec::new();
    let mut records = Vec::new();
    let bonus_token = 'walk: loop {
        let mut q = conds[cur].clone();
        for &c in &topo.children[cur] {
            let token = packed.tokens[c];
            let alpha = accept_probability(q.prob(token), 1.0)?;
            let u: f64 = rng.gen();
            if u < alpha {
                records.push(record(packed, c, true, &conds[cur]));
                accepted.push(c);
                cur = c;
                continue 'walk;
            }
            records.push(record(packed, c, false, &conds[cur]));
            q = residual_distribution(&q, &Categorical::one_hot(vocab, token));
        }
        break sample(&q, rng);
    };
    Ok(VerificationOutcome {
        accepted_length: accepted.len(),
        accepted_node_ids: accepted,
        bonus_token,
        records,
    })
}
