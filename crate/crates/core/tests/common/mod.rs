#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use draftmix::decode::LabeledDrafter;
use draftmix::models::{NGramModel, Token, Vocabulary};
use draftmix::tree::{DraftTree, PackedTree};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use draftmix::analysis::sample_rng as rng_for;

/// Every context of length `order` over `vocab` tokens.
pub fn all_contexts(vocab: usize, order: usize) -> Vec<Vec<Token>> {
    let mut out = vec![vec![]];
    for _ in 0..order {
        out = out
            .into_iter()
            .flat_map(|c: Vec<Token>| {
                (0..vocab as Token).map(move |t| {
                    let mut c = c.clone();
                    c.push(t);
                    c
                })
            })
            .collect();
    }
    out
}

/// Model with random logits in `[-scale, scale]` at each context; a context is
/// left out of the table with probability `sparsity`.
pub fn random_model(vocab: usize, order: usize, scale: f64, sparsity: f64, rng: &mut ChaCha8Rng) -> NGramModel {
    let mut table = BTreeMap::new();
    for ctx in all_contexts(vocab, order) {
        if rng.gen::<f64>() >= sparsity {
            let logits: Vec<f64> = (0..vocab).map(|_| rng.gen_range(-scale..=scale)).collect();
            table.insert(ctx, logits);
        }
    }
    NGramModel::from_table(order, Vocabulary::new(vocab).unwrap(), 0.0, table).unwrap()
}

pub fn labeled(label: &str, model: NGramModel) -> LabeledDrafter {
    LabeledDrafter::new(label, Arc::new(model))
}

pub fn random_prompt(vocab: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<Token> {
    (0..len).map(|_| rng.gen_range(0..vocab as Token)).collect()
}

/// Tree of `n` non-root nodes with random parents among earlier nodes.
pub fn random_tree(root: Token, n: usize, vocab: usize, rng: &mut ChaCha8Rng) -> DraftTree {
    let mut t = DraftTree::new(root);
    for i in 1..=n {
        let parent = rng.gen_range(0..i);
        t.push(parent, rng.gen_range(0..vocab as Token), rng.gen_range(0.01..=1.0), rng.gen_range(0.0..2.0))
            .unwrap();
    }
    t
}

/// Parent of every node from an explicit ancestor walk of the mask: the
/// deepest strict ancestor.
pub fn parents_from_mask(p: &PackedTree) -> Vec<Option<usize>> {
    (0..p.len())
        .map(|i| {
            (0..p.len())
                .filter(|j| *j != i && p.mask[i][*j] == 1)
                .max_by_key(|j| p.positions[*j])
        })
        .collect()
}

/// Independent check of merged packing arithmetic against the two standalone
/// packings.
pub fn check_merge(a: &PackedTree, b: &PackedTree, m: &PackedTree) -> Result<(), String> {
    let (n1, n2) = (a.len() - 1, b.len() - 1);
    let n = n1 + n2 + 1;
    if m.len() != n || m.mask.len() != n || m.positions.len() != n {
        return Err(format!("size {} != {n}", m.len()));
    }
    let in_a = |i: usize| (1..=n1).contains(&i);
    let in_b = |i: usize| i > n1;
    for i in 0..n {
        for j in 0..n {
            if (in_a(i) && in_b(j)) || (in_b(i) && in_a(j)) {
                if m.mask[i][j] != 0 {
                    return Err(format!("cross-subtree entry ({i},{j})"));
                }
            }
        }
    }
    if m.mask[0] != [vec![1u8], vec![0u8; n - 1]].concat() {
        return Err("root row".into());
    }
    for r in 1..=n1 {
        if m.mask[r][..=n1] != a.mask[r][..] {
            return Err(format!("a row {r}"));
        }
    }
    for r in 1..=n2 {
        let row = &m.mask[n1 + r];
        if row[0] != 1 || row[n1 + 1..] != b.mask[r][1..] {
            return Err(format!("b row {r}"));
        }
    }
    let expected_tokens: Vec<_> = a.tokens.iter().chain(&b.tokens[1..]).copied().collect();
    let expected_positions: Vec<_> = a.positions.iter().chain(&b.positions[1..]).copied().collect();
    if m.tokens != expected_tokens || m.positions != expected_positions {
        return Err("tokens or positions".into());
    }
    let width = a.retrieve_indices[0].len().max(b.retrieve_indices[0].len());
    let mut expected = Vec::new();
    for row in &a.retrieve_indices {
        let mut r = vec![-1i64; width];
        r[..row.len()].copy_from_slice(row);
        expected.push(r);
    }
    for row in &b.retrieve_indices {
        let mut r = vec![-1i64; width];
        for (k, v) in row.iter().enumerate() {
            r[k] = if *v > 0 { v + n1 as i64 } else { *v };
        }
        expected.push(r);
    }
    if m.retrieve_indices != expected {
        return Err("retrieve indices".into());
    }
    Ok(())
}

/// Merged and standalone packings give identical verifier outputs on every
/// node of each subtree, for the real target and the stand-in verifier.
pub fn check_subtree_invariance(target: &NGramModel, prefix: &[Token], a: &PackedTree, b: &PackedTree) -> Result<(), String> {
    use draftmix::analysis::masked_reference_logits;
    use draftmix::merge::merge_trees;
    use draftmix::verify::node_conditionals;
    let m = merge_trees(a, b).map_err(|e| e.to_string())?;
    let n1 = a.len() - 1;
    let cm = node_conditionals(target, prefix, &m).map_err(|e| e.to_string())?;
    let ca = node_conditionals(target, prefix, a).map_err(|e| e.to_string())?;
    let cb = node_conditionals(target, prefix, b).map_err(|e| e.to_string())?;
    let (rm, ra, rb) = (masked_reference_logits(&m), masked_reference_logits(a), masked_reference_logits(b));
    for i in 0..a.len() {
        if cm[i] != ca[i] || rm[i] != ra[i] {
            return Err(format!("subtree a node {i}"));
        }
    }
    for i in 1..b.len() {
        if cm[n1 + i] != cb[i] || rm[n1 + i] != rb[i] {
            return Err(format!("subtree b node {i}"));
        }
    }
    Ok(())
}

/// Top-`k` restriction renormalized, with ties at the cut going to lower ids.
pub fn topk_oracle(probs: &[f64], k: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|x, y| probs[*y].partial_cmp(&probs[*x]).unwrap().then(x.cmp(y)));
    let keep = &order[..k];
    let mass: f64 = keep.iter().map(|i| probs[*i]).sum();
    let mut out = vec![0.0; probs.len()];
    for i in keep {
        out[*i] = if mass > 0.0 { probs[*i] / mass } else { 1.0 / k as f64 };
    }
    out
}

/// Distribution with small integer weights, so ties are common.
pub fn tied_distribution(vocab: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..vocab).map(|_| rng.gen_range(0..4) as f64).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return w.iter().map(|x| x / total).collect();
        }
    }
}
