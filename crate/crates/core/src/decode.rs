//! Speculative decoding loop over single, averaged, routed and merged drafts.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::merge::merge_trees;
use crate::models::{average_models, NGramModel, Token};
use crate::router::{route, RoutingRecord, RoutingSignal};
use crate::tree::{build_draft_tree, pack_tree, PackedTree, TreeParams};
use crate::verify::{verify_greedy, verify_sampling, VerificationOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sampling,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::Sampling => "sampling",
        })
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "sampling" => Ok(Self::Sampling),
            other => Err(Error::Parse(format!("unknown decode mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StrategyKind {
    Single,
    Averaged { lambda: f64 },
    Routed { signal: RoutingSignal },
    Merged,
}

#[derive(Debug, Clone)]
pub struct LabeledDrafter {
    pub label: String,
    pub model: Arc<NGramModel>,
}

impl LabeledDrafter {
    pub fn new(label: impl Into<String>, model: Arc<NGramModel>) -> Self {
        Self {
            label: label.into(),
            model,
        }
    }
}

/// How drafts are produced for each verifier call. Single and averaged
/// strategies hold one effective drafter; routed and merged hold two.
#[derive(Debug, Clone)]
pub struct Strategy {
    kind: StrategyKind,
    drafters: Vec<LabeledDrafter>,
    pub tree: TreeParams,
    pub mode: DecodeMode,
}

impl Strategy {
    pub fn single(drafter: LabeledDrafter, tree: TreeParams, mode: DecodeMode) -> Self {
        Self {
            kind: StrategyKind::Single,
            drafters: vec![drafter],
            tree,
            mode,
        }
    }

    /// Interpolates the two drafters once, up front.
    pub fn averaged(
        a: &LabeledDrafter,
        b: &LabeledDrafter,
        lambda: f64,
        tree: TreeParams,
        mode: DecodeMode,
    ) -> Result<Self> {
        let model = average_models(&a.model, &b.model, lambda)?;
        Ok(Self {
            kind: StrategyKind::Averaged { lambda },
            drafters: vec![LabeledDrafter::new(
                format!("averaged({},{},{lambda})", a.label, b.label),
                Arc::new(model),
            )],
            tree,
            mode,
        })
    }

    pub fn routed(
        a: LabeledDrafter,
        b: LabeledDrafter,
        signal: RoutingSignal,
        tree: TreeParams,
        mode: DecodeMode,
    ) -> Self {
        Self {
            kind: StrategyKind::Routed { signal },
            drafters: vec![a, b],
            tree,
            mode,
        }
    }

    pub fn merged(a: LabeledDrafter, b: LabeledDrafter, tree: TreeParams, mode: DecodeMode) -> Self {
        Self {
            kind: StrategyKind::Merged,
            drafters: vec![a, b],
            tree,
            mode,
        }
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn drafters(&self) -> &[LabeledDrafter] {
        &self.drafters
    }

    pub fn with_mode(&self, mode: DecodeMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }

    fn max_order(&self) -> usize {
        self.drafters.iter().map(|d| d.model.order()).max().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        let expected = match self.kind {
            StrategyKind::Single | StrategyKind::Averaged { .. } => 1,
            StrategyKind::Routed { .. } | StrategyKind::Merged => 2,
        };
        if self.drafters.len() != expected {
            return Err(Error::InvalidParameter(format!(
                "{:?} needs {expected} drafters, got {}",
                self.kind,
                self.drafters.len()
            )));
        }
        Ok(())
    }

    /// Drafts the tree to verify at `prefix`, plus the routing decision if any.
    pub fn draft(&self, prefix: &[Token]) -> Result<(PackedTree, Option<RoutingRecord>)> {
        match self.kind {
            StrategyKind::Single | StrategyKind::Averaged { .. } => {
                let tree = build_draft_tree(&self.drafters[0].model, prefix, self.tree)?;
                Ok((pack_tree(&tree), None))
            }
            StrategyKind::Routed { signal } => {
                let ta = build_draft_tree(&self.drafters[0].model, prefix, self.tree)?;
                let tb = build_draft_tree(&self.drafters[1].model, prefix, self.tree)?;
                let record = route(
                    &[
                        (self.drafters[0].label.as_str(), &ta),
                        (self.drafters[1].label.as_str(), &tb),
                    ],
                    signal,
                )?;
                let chosen = if record.chosen_index == 0 { ta } else { tb };
                Ok((pack_tree(&chosen), Some(record)))
            }
            StrategyKind::Merged => {
                let ta = build_draft_tree(&self.drafters[0].model, prefix, self.tree)?;
                let tb = build_draft_tree(&self.drafters[1].model, prefix, self.tree)?;
                Ok((merge_trees(&pack_tree(&ta), &pack_tree(&tb))?, None))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Newly generated tokens, exactly the requested budget.
    pub output_tokens: Vec<Token>,
    pub outcomes: Vec<VerificationOutcome>,
    pub routing_records: Vec<RoutingRecord>,
}

pub fn speculative_decode<R: Rng + ?Sized>(
    target: &NGramModel,
    strategy: &Strategy,
    prompt: &[Token],
    max_new_tokens: usize,
    rng: &mut R,
) -> Result<DecodeResult> {
    strategy.validate()?;
    if max_new_tokens == 0 {
        return Err(Error::InvalidParameter("token budget must be at least 1".into()));
    }
    let needed = target.order().max(strategy.max_order()).max(1);
    if prompt.len() < needed {
        return Err(Error::PrefixTooShort {
            needed,
            got: prompt.len(),
        });
    }
    let mut sequence = prompt.to_vec();
    let mut outcomes = Vec::new();
    let mut routing_records = Vec::new();
    while sequence.len() - prompt.len() < max_new_tokens {
        let (packed, routing) = strategy.draft(&sequence)?;
        let outcome = match strategy.mode {
            DecodeMode::Greedy => verify_greedy(target, &sequence, &packed)?,
            DecodeMode::Sampling => verify_sampling(target, &sequence, &packed, rng)?,
        };
        sequence.extend(outcome.committed_tokens(&packed));
        outcomes.push(outcome);
        routing_records.extend(routing);
    }
    sequence.truncate(prompt.len() + max_new_tokens);
    Ok(DecodeResult {
        output_tokens: sequence.split_off(prompt.len()),
        outcomes,
        routing_records,
    })
}

/// Plain one-token-at-a-time decoding of the target.
pub fn autoregressive_decode<R: Rng + ?Sized>(
    target: &NGramModel,
    prompt: &[Token],
    max_new_tokens: usize,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<Vec<Token>> {
    let mut sequence = prompt.to_vec();
    for _ in 0..max_new_tokens {
        let dist = target.next_distribution(&sequence)?;
        sequence.push(match mode {
            DecodeMode::Greedy => dist.argmax(),
            DecodeMode::Sampling => dist.sample(rng),
        });
    }
    Ok(sequence.split_off(prompt.len()))
}
