//! Shared-root packing of two draft trees.
//!
//! Subtree `a` keeps its indices; subtree `b` is shifted by `n1 = |a| - 1`.
//! Each node attends to the shared root and its own ancestors only, so the
//! two subtrees never see each other.

use crate::error::{Error, Result};
use crate::tree::{PackedTree, PAD};

pub fn merge_trees(a: &PackedTree, b: &PackedTree) -> Result<PackedTree> {
    let (Some(&root_a), Some(&root_b)) = (a.tokens.first(), b.tokens.first()) else {
        return Err(Error::MalformedTree("packed tree without root".into()));
    };
    if root_a != root_b {
        return Err(Error::RootsDiffer(root_a, root_b));
    }
    let n1 = a.tokens.len() - 1;
    let n2 = b.tokens.len() - 1;
    let n = n1 + n2 + 1;

    let mut tokens = a.tokens.clone();
    tokens.extend_from_slice(&b.tokens[1..]);

    let mut mask = vec![vec![0u8; n]; n];
    mask[0][0] = 1;
    for r in 1..=n1 {
        mask[r][..=n1].copy_from_slice(&a.mask[r][..=n1]);
    }
    for r in 1..=n2 {
        let row = &mut mask[n1 + r];
        row[0] = 1;
        row[n1 + 1..].copy_from_slice(&b.mask[r][1..]);
    }

    let mut positions = a.positions.clone();
    positions.extend_from_slice(&b.positions[1..]);

    let width_a = a.retrieve_indices.first().map_or(0, Vec::len);
    let width_b = b.retrieve_indices.first().map_or(0, Vec::len);
    let width = width_a.max(width_b);
    let mut retrieve_indices = Vec::with_capacity(a.retrieve_indices.len() + b.retrieve_indices.len());
    for row in &a.retrieve_indices {
        let mut row = row.clone();
        row.resize(width, PAD);
        retrieve_indices.push(row);
    }
    for row in &b.retrieve_indices {
        let mut row: Vec<i64> = row
            .iter()
            .map(|&i| if i > 0 { i + n1 as i64 } else { i })
            .collect();
        row.resize(width, PAD);
        retrieve_indices.push(row);
    }

    let annotations = if a.annotations.len() == a.tokens.len() && b.annotations.len() == b.tokens.len() {
        let mut ann = a.annotations.clone();
        ann.extend_from_slice(&b.annotations[1..]);
        ann
    } else {
        Vec::new()
    };

    Ok(PackedTree {
        tokens,
        mask,
        positions,
        retrieve_indices,
        annotations,
    })
}
