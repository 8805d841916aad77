//! Acceptance metrics and brute-force oracles.
//!
//! The oracles here stay independent of the verification code they check:
//! exact continuation distributions come straight from the chain rule over
//! the target, and [`masked_reference_logits`] is a stand-in verifier that
//! only ever reads a node's visible set.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{autoregressive_decode, speculative_decode, DecodeMode, DecodeResult, Strategy};
use crate::error::{Error, Result};
use crate::models::{NGramModel, Token};
use crate::router::RoutingRecord;
use crate::tree::PackedTree;
use crate::verify::NodeRecord;

/// Largest continuation space the oracles will enumerate.
pub const ENUMERATION_BOUND: u128 = 100_000;

/// Mean accepted length over every verifier call.
pub fn acceptance_stats(results: &[DecodeResult]) -> Result<f64> {
    let lengths: Vec<usize> = results
        .iter()
        .flat_map(|r| r.outcomes.iter().map(|o| o.accepted_length))
        .collect();
    if lengths.is_empty() {
        return Err(Error::EmptyInput("no verifier calls"));
    }
    Ok(lengths.iter().sum::<usize>() as f64 / lengths.len() as f64)
}

fn records(results: &[DecodeResult]) -> impl Iterator<Item = &NodeRecord> {
    results
        .iter()
        .flat_map(|r| r.outcomes.iter().flat_map(|o| o.records.iter()))
}

/// Accepted fraction of evaluated nodes, per depth. Depths with no records
/// are absent.
pub fn depth_acceptance(results: &[DecodeResult]) -> Result<BTreeMap<usize, f64>> {
    depth_acceptance_from_records(records(results))
}

pub fn depth_acceptance_from_records<'a>(
    records: impl IntoIterator<Item = &'a NodeRecord>,
) -> Result<BTreeMap<usize, f64>> {
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = tally.entry(r.depth).or_default();
        e.1 += 1;
        if r.accepted {
            e.0 += 1;
        }
    }
    if tally.is_empty() {
        return Err(Error::EmptyInput("no node records"));
    }
    Ok(tally
        .into_iter()
        .map(|(d, (acc, all))| (d, acc as f64 / all as f64))
        .collect())
}

/// Mean entropies of accepted vs rejected records. A class with no records
/// is `None`, and so is any delta that depends on it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntropyReport {
    pub accepted_count: usize,
    pub rejected_count: usize,
    pub draft_accepted: Option<f64>,
    pub draft_rejected: Option<f64>,
    pub verifier_accepted: Option<f64>,
    pub verifier_rejected: Option<f64>,
    pub delta_draft: Option<f64>,
    pub delta_verifier: Option<f64>,
}

pub fn entropy_report(results: &[DecodeResult]) -> EntropyReport {
    entropy_report_from_records(records(results))
}

pub fn entropy_report_from_records<'a>(records: impl IntoIterator<Item = &'a NodeRecord>) -> EntropyReport {
    let mut sums = [[0.0f64; 2]; 2]; // [accepted?][draft, verifier]
    let mut counts = [0usize; 2];
    for r in records {
        let k = usize::from(r.accepted);
        sums[k][0] += r.draft_entropy;
        sums[k][1] += r.verifier_entropy;
        counts[k] += 1;
    }
    let mean = |k: usize, m: usize| (counts[k] > 0).then(|| sums[k][m] / counts[k] as f64);
    let delta = |a: Option<f64>, r: Option<f64>| a.zip(r).map(|(a, r)| r - a);
    let (da, dr, va, vr) = (mean(1, 0), mean(0, 0), mean(1, 1), mean(0, 1));
    EntropyReport {
        accepted_count: counts[1],
        rejected_count: counts[0],
        draft_accepted: da,
        draft_rejected: dr,
        verifier_accepted: va,
        verifier_rejected: vr,
        delta_draft: delta(da, dr),
        delta_verifier: delta(va, vr),
    }
}

/// Per-domain routing contingency table.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutingTable {
    pub counts: BTreeMap<String, BTreeMap<String, usize>>,
}

impl RoutingTable {
    pub fn total(&self, domain: &str) -> usize {
        self.counts.get(domain).map_or(0, |row| row.values().sum())
    }

    pub fn count(&self, domain: &str, specialist: &str) -> usize {
        self.counts
            .get(domain)
            .and_then(|row| row.get(specialist))
            .copied()
            .unwrap_or(0)
    }

    /// Row percentage in `[0, 100]`.
    pub fn percent(&self, domain: &str, specialist: &str) -> f64 {
        let total = self.total(domain);
        if total == 0 {
            return 0.0;
        }
        100.0 * self.count(domain, specialist) as f64 / total as f64
    }
}

pub fn routing_counts(records: &[RoutingRecord]) -> Result<RoutingTable> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no routing records"));
    }
    let mut table = RoutingTable::default();
    for r in records {
        *table
            .counts
            .entry(r.prompt_domain.clone())
            .or_default()
            .entry(r.chosen.clone())
            .or_default() += 1;
    }
    Ok(table)
}

fn outcome_space(vocab: usize, horizon: usize) -> Result<usize> {
    let size = (vocab as u128)
        .checked_pow(horizon as u32)
        .unwrap_or(u128::MAX);
    if size > ENUMERATION_BOUND {
        return Err(Error::EnumerationTooLarge(size));
    }
    Ok(size as usize)
}

/// Index of a continuation, first token most significant.
pub fn encode_continuation(tokens: &[Token], vocab: usize) -> usize {
    tokens.iter().fold(0, |acc, t| acc * vocab + *t as usize)
}

pub fn decode_continuation(mut index: usize, vocab: usize, horizon: usize) -> Vec<Token> {
    let mut out = vec![0; horizon];
    for slot in out.iter_mut().rev() {
        *slot = (index % vocab) as Token;
        index /= vocab;
    }
    out
}

/// Chain-rule probability of every `horizon`-token continuation.
pub fn exact_target_distribution(target: &NGramModel, prompt: &[Token], horizon: usize) -> Result<Vec<f64>> {
    let vocab = target.vocab().size();
    let size = outcome_space(vocab, horizon)?;
    let mut out = vec![0.0; size];
    let mut context = prompt.to_vec();
    fn walk(
        target: &NGramModel,
        context: &mut Vec<Token>,
        remaining: usize,
        mass: f64,
        index: usize,
        out: &mut [f64],
    ) -> Result<()> {
        if remaining == 0 {
            out[index] = mass;
            return Ok(());
        }
        let dist = target.next_distribution(context)?;
        let vocab = dist.len();
        for t in 0..vocab {
            context.push(t as Token);
            walk(target, context, remaining - 1, mass * dist.prob(t as Token), index * vocab + t, out)?;
            context.pop();
        }
        Ok(())
    }
    walk(target, &mut context, horizon, 1.0, 0, &mut out)?;
    Ok(out)
}

/// Independent stream for sample `index` of a seeded run.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn histogram(size: usize, draws: Vec<usize>) -> Vec<f64> {
    let mut counts = vec![0.0; size];
    let n = draws.len() as f64;
    for d in draws {
        counts[d] += 1.0;
    }
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

/// Normalized histogram of the first `horizon` tokens over `n_samples`
/// independently seeded speculative decodes (sampling mode only).
pub fn empirical_decode_distribution(
    target: &NGramModel,
    strategy: &Strategy,
    prompt: &[Token],
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if strategy.mode != DecodeMode::Sampling {
        return Err(Error::GreedyNotSampled);
    }
    if n_samples == 0 {
        return Err(Error::EmptyInput("zero samples"));
    }
    let vocab = target.vocab().size();
    let size = outcome_space(vocab, horizon)?;
    let draws = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let r = speculative_decode(target, strategy, prompt, horizon, &mut rng)?;
            Ok(encode_continuation(&r.output_tokens, vocab))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(histogram(size, draws))
}

/// Same-size Monte Carlo baseline drawn directly from the target.
pub fn empirical_target_distribution(
    target: &NGramModel,
    prompt: &[Token],
    horizon: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::EmptyInput("zero samples"));
    }
    let vocab = target.vocab().size();
    let size = outcome_space(vocab, horizon)?;
    let draws = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let out = autoregressive_decode(target, prompt, horizon, DecodeMode::Sampling, &mut rng)?;
            Ok(encode_continuation(&out, vocab))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(histogram(size, draws))
}

/// `(1/2) sum |d1 - d2|`.
pub fn tv_distance(d1: &[f64], d2: &[f64]) -> Result<f64> {
    if d1.len() != d2.len() {
        return Err(Error::MismatchedSupports(d1.len(), d2.len()));
    }
    Ok(0.5 * d1.iter().zip(d2).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Width of the stand-in verifier's output vectors.
pub const REFERENCE_WIDTH: usize = 8;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Stand-in verifier: node `i`'s vector is an order-free hash mix of the
/// multiset `{(token_j, position_j) : mask[i][j] = 1}` and nothing else.
pub fn masked_reference_logits(packed: &PackedTree) -> Vec<Vec<f64>> {
    (0..packed.len())
        .map(|i| {
            let mut acc = [0u64; REFERENCE_WIDTH];
            for j in 0..packed.len() {
                if packed.mask[i][j] != 1 {
                    continue;
                }
                let key = ((packed.tokens[j] as u64) << 32) | packed.positions[j] as u64;
                for (k, slot) in acc.iter_mut().enumerate() {
                    *slot = slot.wrapping_add(splitmix64(key ^ splitmix64(k as u64)));
                }
            }
            acc.iter()
                .map(|h| (*h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
                .collect()
        })
        .collect()
}
