//! Pre-verification selection between specialist draft trees.
//!
//! Routing only looks at draft-side quantities; there is no way to pass the
//! target model in.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::DraftTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingSignal {
    /// Highest mean node confidence wins.
    Confidence,
    /// Lowest mean draft entropy wins.
    Entropy,
}

impl fmt::Display for RoutingSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Confidence => "confidence",
            Self::Entropy => "entropy",
        })
    }
}

impl FromStr for RoutingSignal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Self::Confidence),
            "entropy" => Ok(Self::Entropy),
            other => Err(Error::Parse(format!("unknown routing signal {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub prompt_domain: String,
    pub chosen: String,
    pub chosen_index: usize,
    pub signal: RoutingSignal,
    pub scores: Vec<f64>,
}

impl RoutingRecord {
    pub const CSV_HEADER: &'static str = "domain,signal,chosen,score_1,score_2";

    pub fn to_csv_row(&self) -> String {
        let score = |i: usize| self.scores.get(i).map(|s| format!("{s}")).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.prompt_domain,
            self.signal,
            self.chosen,
            score(0),
            score(1)
        )
    }
}

/// Mean confidence over non-root nodes.
pub fn score_tree_confidence(tree: &DraftTree) -> Result<f64> {
    mean_over_nodes(tree, |n| n.confidence)
}

/// Mean entropy (nats) of the drafter distributions that produced each
/// non-root node. The tree records these at build time.
pub fn score_tree_entropy(tree: &DraftTree) -> Result<f64> {
    mean_over_nodes(tree, |n| n.draft_entropy)
}

fn mean_over_nodes(tree: &DraftTree, f: impl Fn(&crate::tree::DraftNode) -> f64) -> Result<f64> {
    let nodes = &tree.nodes()[1..];
    if nodes.is_empty() {
        return Err(Error::EmptyTree);
    }
    Ok(nodes.iter().map(f).sum::<f64>() / nodes.len() as f64)
}

pub fn score_tree(tree: &DraftTree, signal: RoutingSignal) -> Result<f64> {
    match signal {
        RoutingSignal::Confidence => score_tree_confidence(tree),
        RoutingSignal::Entropy => score_tree_entropy(tree),
    }
}

/// Picks one tree; ties go to the earlier entry. `prompt_domain` is left
/// empty for the caller to fill in.
pub fn route(trees: &[(&str, &DraftTree)], signal: RoutingSignal) -> Result<RoutingRecord> {
    if trees.len() < 2 {
        return Err(Error::TooFewTrees(trees.len()));
    }
    let scores = trees
        .iter()
        .map(|(_, t)| score_tree(t, signal))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let better = match signal {
            RoutingSignal::Confidence => *s > scores[best],
            RoutingSignal::Entropy => *s < scores[best],
        };
        if better {
            best = i;
        }
    }
    Ok(RoutingRecord {
        prompt_domain: String::new(),
        chosen: trees[best].0.to_string(),
        chosen_index: best,
        signal,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree_with(confidences: &[f64], entropies: &[f64]) -> DraftTree {
        let mut t = DraftTree::new(0);
        for (i, (c, h)) in confidences.iter().zip(entropies).enumerate() {
            t.push(0, i as u32, *c, *h).unwrap();
        }
        t
    }

    #[test]
    fn confidence_means() {
        let t = tree_with(&[0.9, 0.5, 0.7], &[0.0; 3]);
        assert!((score_tree_confidence(&t).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(score_tree_confidence(&tree_with(&[0.6], &[0.0])).unwrap(), 0.6);
        assert_eq!(score_tree_confidence(&tree_with(&[1.0; 4], &[0.0; 4])).unwrap(), 1.0);
        assert_eq!(score_tree_confidence(&DraftTree::new(0)), Err(Error::EmptyTree));
    }

    #[test]
    fn entropy_means() {
        let t = tree_with(&[0.5, 0.5], &[0.2, 0.6]);
        assert!((score_tree_entropy(&t).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(score_tree_entropy(&DraftTree::new(0)), Err(Error::EmptyTree));
    }

    #[test]
    fn routing_rules() {
        let high = tree_with(&[0.8], &[1.2]);
        let low = tree_with(&[0.3], &[0.4]);
        let r = route(&[("a", &high), ("b", &low)], RoutingSignal::Confidence).unwrap();
        assert_eq!((r.chosen.as_str(), r.chosen_index), ("a", 0));
        assert_eq!(r.scores, vec![0.8, 0.3]);
        let r = route(&[("a", &high), ("b", &low)], RoutingSignal::Entropy).unwrap();
        assert_eq!(r.chosen, "b");
        let r = route(&[("a", &low), ("b", &low)], RoutingSignal::Confidence).unwrap();
        assert_eq!(r.chosen, "a");
        assert_eq!(
            route(&[("a", &low)], RoutingSignal::Confidence),
            Err(Error::TooFewTrees(1))
        );
    }

    #[test]
    fn csv_row() {
        let high = tree_with(&[0.5], &[1.0]);
        let low = tree_with(&[0.25], &[2.0]);
        let mut r = route(&[("A", &high), ("B", &low)], RoutingSignal::Confidence).unwrap();
        r.prompt_domain = "domA".into();
        assert_eq!(r.to_csv_row(), "domA,confidence,A,0.5,0.25");
        assert_eq!("entropy".parse::<RoutingSignal>().unwrap(), RoutingSignal::Entropy);
        assert!("median".parse::<RoutingSignal>().is_err());
    }
}
