//! Losslessness suite on small random instances.
//!
//! Greedy decoding is compared token by token against autoregressive
//! decoding; sampling is compared against the enumerated target law, with a
//! same-size resample of the target as the noise yardstick.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    empirical_decode_distribution, empirical_target_distribution, exact_target_distribution,
    masked_reference_logits, sample_rng, tv_distance,
};
use crate::decode::{autoregressive_decode, speculative_decode, DecodeMode, LabeledDrafter, Strategy};
use crate::error::{Error, Result};
use crate::merge::merge_trees;
use crate::models::{NGramModel, Token, Vocabulary};
use crate::router::RoutingSignal;
use crate::tree::{build_draft_tree, pack_tree, TreeParams};
use crate::verify::node_conditionals;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Random instances for the greedy and packing checks.
    pub instances: usize,
    pub greedy_length: usize,
    pub vocab_size: usize,
    pub order: usize,
    pub horizon: usize,
    /// Samples per strategy for the sampling check.
    pub samples: usize,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            greedy_length: 64,
            vocab_size: 4,
            order: 1,
            horizon: 3,
            samples: 500_000,
            tree: TreeParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingCheck {
    pub strategy: String,
    pub tv: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub config: OracleConfig,
    pub greedy_decodes: usize,
    pub greedy_mismatches: usize,
    pub packing_instances: usize,
    pub packing_failures: usize,
    /// TV between a direct target resample and the exact law.
    pub resample_tv: f64,
    pub sampling: Vec<SamplingCheck>,
}

impl OracleReport {
    pub fn pass(&self) -> bool {
        self.greedy_mismatches == 0 && self.packing_failures == 0 && self.sampling.iter().all(|s| s.pass)
    }
}

/// Full table of uniform random logits in `[-scale, scale]`.
pub fn random_table_model<R: Rng + ?Sized>(vocab: usize, order: usize, scale: f64, rng: &mut R) -> Result<NGramModel> {
    let v = Vocabulary::new(vocab)?;
    let mut table = BTreeMap::new();
    let contexts = vocab.checked_pow(order as u32).ok_or(Error::EnumerationTooLarge(u128::MAX))?;
    for mut index in 0..contexts {
        let mut ctx = vec![0 as Token; order];
        for slot in ctx.iter_mut().rev() {
            *slot = (index % vocab) as Token;
            index /= vocab;
        }
        table.insert(ctx, (0..vocab).map(|_| rng.gen_range(-scale..=scale)).collect());
    }
    NGramModel::from_table(order, v, 0.0, table)
}

fn strategies(a: &LabeledDrafter, b: &LabeledDrafter, tree: TreeParams, mode: DecodeMode) -> Result<Vec<(&'static str, Strategy)>> {
    Ok(vec![
        ("single_a", Strategy::single(a.clone(), tree, mode)),
        ("single_b", Strategy::single(b.clone(), tree, mode)),
        ("averaged", Strategy::averaged(a, b, 0.5, tree, mode)?),
        ("routed_confidence", Strategy::routed(a.clone(), b.clone(), RoutingSignal::Confidence, tree, mode)),
        ("routed_entropy", Strategy::routed(a.clone(), b.clone(), RoutingSignal::Entropy, tree, mode)),
        ("merged", Strategy::merged(a.clone(), b.clone(), tree, mode)),
    ])
}

struct Instance {
    target: NGramModel,
    a: LabeledDrafter,
    b: LabeledDrafter,
    prompt: Vec<Token>,
}

fn instance(config: &OracleConfig, index: u64) -> Result<Instance> {
    let mut rng = sample_rng(config.seed, index);
    let (v, o) = (config.vocab_size, config.order);
    let scale = rng.gen_range(0.5..4.0);
    let target = random_table_model(v, o, scale, &mut rng)?;
    let a = LabeledDrafter::new("a", Arc::new(random_table_model(v, o, scale, &mut rng)?));
    let b = LabeledDrafter::new("b", Arc::new(random_table_model(v, o, scale, &mut rng)?));
    let prompt = (0..o.max(1)).map(|_| rng.gen_range(0..v as Token)).collect();
    Ok(Instance { target, a, b, prompt })
}

/// Merged and standalone packings must give identical target conditionals
/// and stand-in verifier outputs on every subtree node.
fn packing_invariant(inst: &Instance, tree: TreeParams) -> Result<bool> {
    let ta = pack_tree(&build_draft_tree(&inst.a.model, &inst.prompt, tree)?);
    let tb = pack_tree(&build_draft_tree(&inst.b.model, &inst.prompt, tree)?);
    let m = merge_trees(&ta, &tb)?;
    let n1 = ta.len() - 1;
    let (cm, ca, cb) = (
        node_conditionals(&inst.target, &inst.prompt, &m)?,
        node_conditionals(&inst.target, &inst.prompt, &ta)?,
        node_conditionals(&inst.target, &inst.prompt, &tb)?,
    );
    let (rm, ra, rb) = (masked_reference_logits(&m), masked_reference_logits(&ta), masked_reference_logits(&tb));
    let a_ok = (0..ta.len()).all(|i| cm[i] == ca[i] && rm[i] == ra[i]);
    let b_ok = (1..tb.len()).all(|i| cm[n1 + i] == cb[i] && rm[n1 + i] == rb[i]);
    Ok(a_ok && b_ok)
}

pub fn run_oracle(config: &OracleConfig) -> Result<OracleReport> {
    config.tree.validate()?;
    if config.instances == 0 || config.samples == 0 || config.horizon == 0 || config.greedy_length == 0 {
        return Err(Error::InvalidParameter("oracle counts must be positive".into()));
    }
    let mut greedy_decodes = 0;
    let mut greedy_mismatches = 0;
    let mut packing_failures = 0;
    for i in 0..config.instances as u64 {
        let inst = instance(config, i)?;
        let mut unused = sample_rng(config.seed, u64::MAX);
        let reference = autoregressive_decode(&inst.target, &inst.prompt, config.greedy_length, DecodeMode::Greedy, &mut unused)?;
        for (_, s) in strategies(&inst.a, &inst.b, config.tree, DecodeMode::Greedy)? {
            let out = speculative_decode(&inst.target, &s, &inst.prompt, config.greedy_length, &mut unused)?;
            greedy_decodes += 1;
            greedy_mismatches += usize::from(out.output_tokens != reference);
        }
        packing_failures += usize::from(!packing_invariant(&inst, config.tree)?);
    }

    let inst = instance(config, config.instances as u64)?;
    let exact = exact_target_distribution(&inst.target, &inst.prompt, config.horizon)?;
    let resample = empirical_target_distribution(&inst.target, &inst.prompt, config.horizon, config.samples, config.seed)?;
    let resample_tv = tv_distance(&resample, &exact)?;
    let bound = 1.5 * resample_tv + 0.005;
    let mut sampling = Vec::new();
    for (k, (name, s)) in strategies(&inst.a, &inst.b, config.tree, DecodeMode::Sampling)?
        .into_iter()
        .enumerate()
    {
        let seed = config.seed.wrapping_add(1 + k as u64);
        let empirical = empirical_decode_distribution(&inst.target, &s, &inst.prompt, config.horizon, config.samples, seed)?;
        let tv = tv_distance(&empirical, &exact)?;
        sampling.push(SamplingCheck {
            strategy: name.to_string(),
            tv,
            bound,
            pass: tv <= bound,
        });
    }
    Ok(OracleReport {
        config: config.clone(),
        greedy_decodes,
        greedy_mismatches,
        packing_instances: config.instances,
        packing_failures,
        resample_tv,
        sampling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_table_is_complete() {
        let m = random_table_model(3, 2, 1.0, &mut sample_rng(0, 0)).unwrap();
        assert_eq!(m.table().len(), 9);
        assert!(m.table().values().flatten().all(|l| l.abs() <= 1.0));
    }

    #[test]
    fn small_suite_passes() {
        let config = OracleConfig {
            instances: 10,
            greedy_length: 20,
            samples: 20_000,
            ..OracleConfig::default()
        };
        let report = run_oracle(&config).unwrap();
        assert_eq!(report.greedy_decodes, 60);
        assert_eq!(report.sampling.len(), 6);
        assert!(report.pass(), "{report:?}");
    }
}
