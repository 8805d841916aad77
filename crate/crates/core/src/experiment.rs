//! Synthetic two-domain workloads and the experiment grid.
//!
//! Two order-2 Markov sources stand in for a "structured" domain A and a
//! "broad" domain B. A owns the lower half of the vocabulary and B the upper
//! half; the last token of a context decides whose home it is.
//!
//! * At home, A has one dominant continuation (`a_peak`), a second home token
//!   and a small tail over the whole vocabulary. B splits a head mass between
//!   two tokens of its half and leaves a tail, most of it on its own half.
//! * At the other source's home, a source behaves as a visitor: it usually
//!   spreads over a few foreign tokens, sometimes knows the native top
//!   continuation, and keeps some mass for returning home.
//!
//! A drafter trained on one source is therefore unsure but not diffuse on the
//! other domain, while B's own near-ties keep its home entropy high. The
//! target is a higher-order model trained on both corpora.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    acceptance_stats, depth_acceptance, entropy_report, routing_counts, sample_rng, EntropyReport,
    RoutingTable,
};
use crate::decode::{
    autoregressive_decode, speculative_decode, DecodeMode, DecodeResult, LabeledDrafter, Strategy,
};
use crate::error::{Error, Result};
use crate::models::{average_models, train_ngram, Categorical, DomainCorpus, NGramModel, Token, Vocabulary};
use crate::router::{RoutingRecord, RoutingSignal};
use crate::tree::TreeParams;

pub const DOMAIN_A: &str = "domain_a";
pub const DOMAIN_B: &str = "domain_b";
pub const DRAFTER_A: &str = "drafter_a";
pub const DRAFTER_B: &str = "drafter_b";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    /// Range of source A's top continuation probability at home contexts;
    /// the rest, minus the tail, goes to a second home token.
    pub a_peak: (f64, f64),
    /// Mass source A spreads uniformly over the whole vocabulary at home.
    pub a_tail: f64,
    /// Range of the mass source B puts on its two head tokens at home.
    pub b_head_mass: (f64, f64),
    /// Range of the ratio between B's second and top head token.
    pub b_ratio: (f64, f64),
    /// Share of B's tail mass that falls on A's half.
    pub b_leak: f64,
    /// Behaviour of source A at contexts ending in B's half.
    pub a_visit: VisitParams,
    /// Behaviour of source B at contexts ending in A's half.
    pub b_visit: VisitParams,
    pub sequences_per_domain: usize,
    pub sequence_length: usize,
    pub prompt_length: usize,
    /// Steps discarded before a sequence starts.
    pub burn_in: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            a_peak: (0.75, 0.95),
            a_tail: 0.005,
            b_head_mass: (0.7, 0.85),
            b_ratio: (0.3, 0.95),
            b_leak: 0.01,
            a_visit: VisitParams {
                known: 0.25,
                known_peak: 0.5,
                spread: (2, 4),
                ret: 0.1,
            },
            b_visit: VisitParams {
                known: 0.25,
                known_peak: 0.6,
                spread: (4, 6),
                ret: 0.15,
            },
            sequences_per_domain: 8000,
            sequence_length: 128,
            prompt_length: 8,
            burn_in: 16,
        }
    }
}

/// Rows of a source at contexts ending in the other source's half.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisitParams {
    /// Share of contexts where the visitor knows the native top continuation.
    pub known: f64,
    /// Visitor mass on the native top continuation where it is known; the
    /// rest of the foreign mass goes to one other foreign token.
    pub known_peak: f64,
    /// Range of the number of equally likely foreign continuations where
    /// the native top is not known.
    pub spread: (usize, usize),
    /// Mass spread uniformly over the visitor's home half.
    pub ret: f64,
}

impl VisitParams {
    fn validate(&self, vocab: usize) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if ![self.known, self.known_peak, self.ret].into_iter().all(unit) || self.known_peak + self.ret > 1.0 {
            return Err(Error::InvalidParameter("visit probabilities must lie in [0, 1] and leave room for the return mass".into()));
        }
        let (lo, hi) = self.spread;
        if lo == 0 || lo > hi || hi > vocab / 2 - 1 {
            return Err(Error::InvalidParameter("visit spread must be an ordered range within 1..vocab_size/2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub vocab_size: usize,
    pub target_order: usize,
    pub drafter_order: usize,
    pub smoothing_alpha: f64,
    pub generator: GeneratorParams,
    /// Share of each specialist corpus used by the small mixed drafter.
    pub mixed_small_fraction: f64,
    pub tree: TreeParams,
    pub strategies: Vec<StrategyName>,
    pub modes: Vec<DecodeMode>,
    pub lambda_grid: Vec<f64>,
    pub averaged_lambda: f64,
    pub prompts_per_domain: usize,
    pub eval_length: usize,
    pub seeds: Vec<u64>,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            target_order: 3,
            drafter_order: 2,
            smoothing_alpha: 0.01,
            generator: GeneratorParams::default(),
            mixed_small_fraction: 0.5,
            tree: TreeParams::default(),
            strategies: StrategyName::ALL.to_vec(),
            modes: vec![DecodeMode::Greedy, DecodeMode::Sampling],
            lambda_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            averaged_lambda: 0.5,
            prompts_per_domain: 200,
            eval_length: 64,
            seeds: (0..10).collect(),
            output_dir: "reports".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        Vocabulary::new(self.vocab_size)?;
        if self.vocab_size < 8 {
            return bad("vocab_size must be at least 8 for two domains".into());
        }
        if self.target_order == 0 || self.drafter_order == 0 {
            return bad("model orders must be positive".into());
        }
        if !(self.smoothing_alpha >= 0.0) {
            return bad("smoothing_alpha must be non-negative".into());
        }
        self.tree.validate()?;
        let g = &self.generator;
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        let range = |(lo, hi): (f64, f64)| unit(lo) && unit(hi) && lo <= hi;
        if !range(g.a_peak)
            || !range(g.b_head_mass)
            || !range(g.b_ratio)
            || ![g.a_tail, g.b_leak].into_iter().all(unit)
            || g.a_peak.1 + g.a_tail > 1.0
        {
            return bad("generator probabilities must lie in [0, 1], ranges must be ordered and rows must sum to 1".into());
        }
        g.a_visit.validate(self.vocab_size)?;
        g.b_visit.validate(self.vocab_size)?;
        let min_len = self.target_order.max(self.drafter_order);
        if g.sequences_per_domain == 0 || g.sequence_length <= min_len || g.prompt_length < min_len {
            return bad("corpus and prompt sizes are too small for the model orders".into());
        }
        if !(self.mixed_small_fraction > 0.0 && self.mixed_small_fraction <= 1.0) {
            return bad("mixed_small_fraction must lie in (0, 1]".into());
        }
        if self.strategies.is_empty() || self.modes.is_empty() {
            return bad("strategies and modes must be non-empty".into());
        }
        if self
            .lambda_grid
            .iter()
            .chain(std::iter::once(&self.averaged_lambda))
            .any(|l| !(0.0..=1.0).contains(l))
        {
            return bad("lambda values must lie in [0, 1]".into());
        }
        if self.prompts_per_domain == 0 || self.eval_length == 0 || self.seeds.is_empty() {
            return bad("prompt count, eval length and seed list must be positive".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    SingleA,
    SingleB,
    MixedSmall,
    MixedLarge,
    Averaged,
    RoutedConfidence,
    RoutedEntropy,
    Merged,
}

impl StrategyName {
    pub const ALL: [StrategyName; 8] = [
        Self::SingleA,
        Self::SingleB,
        Self::MixedSmall,
        Self::MixedLarge,
        Self::Averaged,
        Self::RoutedConfidence,
        Self::RoutedEntropy,
        Self::Merged,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SingleA => "single_a",
            Self::SingleB => "single_b",
            Self::MixedSmall => "mixed_small",
            Self::MixedLarge => "mixed_large",
            Self::Averaged => "averaged",
            Self::RoutedConfidence => "routed_confidence",
            Self::RoutedEntropy => "routed_entropy",
            Self::Merged => "merged",
        }
    }
}

/// Order-2 Markov source over the full vocabulary.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    vocab: usize,
    rows: Vec<Categorical>,
    home: std::ops::Range<Token>,
}

impl MarkovSource {
    pub fn distribution(&self, context: (Token, Token)) -> &Categorical {
        &self.rows[context.0 as usize * self.vocab + context.1 as usize]
    }

    /// Tokens the source starts from.
    pub fn home(&self) -> std::ops::Range<Token> {
        self.home.clone()
    }

    pub fn sample_sequence<R: Rng + ?Sized>(&self, len: usize, burn_in: usize, rng: &mut R) -> Vec<Token> {
        let mut seq = vec![rng.gen_range(self.home()), rng.gen_range(self.home())];
        for _ in 0..burn_in + len.saturating_sub(2) {
            let n = seq.len();
            seq.push(self.distribution((seq[n - 2], seq[n - 1])).sample(rng));
        }
        seq.split_off(seq.len() - len)
    }

    /// Mean negative log-likelihood per predicted token (nats). Zero
    /// probabilities are floored at `1e-300`.
    pub fn cross_entropy(&self, sequences: &[Vec<Token>]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for seq in sequences {
            for w in seq.windows(3) {
                let p = self.distribution((w[0], w[1])).prob(w[2]).max(1e-300);
                total -= p.ln();
                count += 1;
            }
        }
        total / count.max(1) as f64
    }
}

/// Distinct tokens drawn uniformly from `range`.
fn distinct(range: std::ops::Range<Token>, n: usize, rng: &mut ChaCha8Rng) -> Vec<Token> {
    let mut picked = Vec::with_capacity(n);
    while picked.len() < n {
        let t = rng.gen_range(range.clone());
        if !picked.contains(&t) {
            picked.push(t);
        }
    }
    picked
}

fn a_home_row(vocab: usize, g: &GeneratorParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let half = (vocab / 2) as Token;
    let mut probs = vec![g.a_tail / vocab as f64; vocab];
    let [peak, second] = distinct(0..half, 2, rng)[..] else { unreachable!() };
    let p = rng.gen_range(g.a_peak.0..=g.a_peak.1);
    probs[peak as usize] += p;
    probs[second as usize] += 1.0 - p - g.a_tail;
    probs
}

fn b_home_row(vocab: usize, g: &GeneratorParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let half = (vocab / 2) as Token;
    let mass = rng.gen_range(g.b_head_mass.0..=g.b_head_mass.1);
    let ratio = rng.gen_range(g.b_ratio.0..=g.b_ratio.1);
    let tail = 1.0 - mass;
    let mut probs: Vec<f64> = (0..vocab as Token)
        .map(|t| {
            if t < half {
                tail * g.b_leak / half as f64
            } else {
                tail * (1.0 - g.b_leak) / (vocab as Token - half) as f64
            }
        })
        .collect();
    let [first, next] = distinct(half..vocab as Token, 2, rng)[..] else { unreachable!() };
    probs[first as usize] += mass / (1.0 + ratio);
    probs[next as usize] += mass * ratio / (1.0 + ratio);
    probs
}

/// Row of a source visiting a context whose native row is `native`.
fn visitor_row(
    native: &[f64],
    home: std::ops::Range<Token>,
    foreign: std::ops::Range<Token>,
    v: &VisitParams,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut probs = vec![0.0; native.len()];
    for t in home.clone() {
        probs[t as usize] = v.ret / home.len() as f64;
    }
    let spread = rng.gen_range(v.spread.0..=v.spread.1);
    if rng.gen::<f64>() < v.known {
        let top = Categorical::from_weights(native.to_vec()).expect("native row").argmax();
        probs[top as usize] += v.known_peak;
        let others: Vec<Token> = foreign.filter(|t| *t != top).collect();
        probs[others[rng.gen_range(0..others.len())] as usize] += 1.0 - v.ret - v.known_peak;
    } else {
        for t in distinct(foreign, spread, rng) {
            probs[t as usize] += (1.0 - v.ret) / spread as f64;
        }
    }
    probs
}

/// Both sources. Each uses its home rule at contexts ending in its own half
/// and the visitor rule, derived from the other source's home rule, elsewhere.
fn sources(vocab: usize, g: &GeneratorParams, rng: &mut ChaCha8Rng) -> (MarkovSource, MarkovSource) {
    let half = (vocab / 2) as Token;
    let (lower, upper) = (0..half, half..vocab as Token);
    let mut a_rows = Vec::with_capacity(vocab * vocab);
    let mut b_rows = Vec::with_capacity(vocab * vocab);
    for ctx in 0..vocab * vocab {
        let (a, b) = if ((ctx % vocab) as Token) < half {
            let a = a_home_row(vocab, g, rng);
            let b = visitor_row(&a, upper.clone(), lower.clone(), &g.b_visit, rng);
            (a, b)
        } else {
            let b = b_home_row(vocab, g, rng);
            let a = visitor_row(&b, lower.clone(), upper.clone(), &g.a_visit, rng);
            (a, b)
        };
        a_rows.push(Categorical::from_weights(a).expect("positive weights"));
        b_rows.push(Categorical::from_weights(b).expect("positive weights"));
    }
    (
        MarkovSource {
            vocab,
            rows: a_rows,
            home: lower,
        },
        MarkovSource {
            vocab,
            rows: b_rows,
            home: upper,
        },
    )
}

#[derive(Debug, Clone)]
pub struct Domains {
    pub source_a: MarkovSource,
    pub source_b: MarkovSource,
    pub corpus_a: DomainCorpus,
    pub corpus_b: DomainCorpus,
    pub prompts_a: Vec<Vec<Token>>,
    pub prompts_b: Vec<Vec<Token>>,
}

impl Domains {
    pub fn prompts(&self, domain: &str) -> &[Vec<Token>] {
        if domain == DOMAIN_A {
            &self.prompts_a
        } else {
            &self.prompts_b
        }
    }
}

/// Samples both sources, their training corpora and held-out prompts.
/// Deterministic per seed.
pub fn generate_domains(config: &ExperimentConfig, seed: u64) -> Result<Domains> {
    config.validate()?;
    let vocab = Vocabulary::new(config.vocab_size)?;
    let g = &config.generator;
    let mut structure = sample_rng(seed, 0);
    let (source_a, source_b) = sources(config.vocab_size, g, &mut structure);

    let draw = |source: &MarkovSource, stream: u64, count: usize, len: usize| {
        let mut rng = sample_rng(seed, stream);
        (0..count)
            .map(|_| source.sample_sequence(len, g.burn_in, &mut rng))
            .collect::<Vec<_>>()
    };
    let corpus_a = DomainCorpus::new(
        DOMAIN_A,
        vocab,
        draw(&source_a, 1, g.sequences_per_domain, g.sequence_length),
    )?;
    let corpus_b = DomainCorpus::new(
        DOMAIN_B,
        vocab,
        draw(&source_b, 2, g.sequences_per_domain, g.sequence_length),
    )?;
    let prompts_a = draw(&source_a, 3, config.prompts_per_domain, g.prompt_length);
    let prompts_b = draw(&source_b, 4, config.prompts_per_domain, g.prompt_length);
    Ok(Domains {
        source_a,
        source_b,
        corpus_a,
        corpus_b,
        prompts_a,
        prompts_b,
    })
}

/// All trained models for one seed.
#[derive(Debug, Clone)]
pub struct Variants {
    pub target: Arc<NGramModel>,
    pub drafter_a: Arc<NGramModel>,
    pub drafter_b: Arc<NGramModel>,
    pub mixed_small: Arc<NGramModel>,
    pub mixed_large: Arc<NGramModel>,
    pub averaged: Arc<NGramModel>,
}

impl Variants {
    pub fn named(&self) -> Vec<(&'static str, &NGramModel)> {
        vec![
            ("target", &self.target),
            (DRAFTER_A, &self.drafter_a),
            (DRAFTER_B, &self.drafter_b),
            ("mixed_small", &self.mixed_small),
            ("mixed_large", &self.mixed_large),
            ("averaged", &self.averaged),
        ]
    }
}

fn head(corpus: &DomainCorpus, fraction: f64) -> DomainCorpus {
    let keep = ((corpus.sequences.len() as f64 * fraction).round() as usize).max(1);
    DomainCorpus {
        domain_label: corpus.domain_label.clone(),
        vocab: corpus.vocab,
        sequences: corpus.sequences[..keep.min(corpus.sequences.len())].to_vec(),
    }
}

pub fn build_variants(config: &ExperimentConfig, domains: &Domains) -> Result<Variants> {
    let alpha = config.smoothing_alpha;
    let union = domains.corpus_a.concat(&domains.corpus_b, "union")?;
    let small = head(&domains.corpus_a, config.mixed_small_fraction)
        .concat(&head(&domains.corpus_b, config.mixed_small_fraction), "mixed_small")?;
    let drafter_a = train_ngram(&domains.corpus_a, config.drafter_order, alpha)?;
    let drafter_b = train_ngram(&domains.corpus_b, config.drafter_order, alpha)?;
    let averaged = average_models(&drafter_a, &drafter_b, config.averaged_lambda)?;
    Ok(Variants {
        target: Arc::new(train_ngram(&union, config.target_order, alpha)?),
        mixed_small: Arc::new(train_ngram(&small, config.drafter_order, alpha)?),
        mixed_large: Arc::new(train_ngram(&union, config.drafter_order, alpha)?),
        averaged: Arc::new(averaged),
        drafter_a: Arc::new(drafter_a),
        drafter_b: Arc::new(drafter_b),
    })
}

pub fn make_strategy(name: StrategyName, variants: &Variants, tree: TreeParams, mode: DecodeMode) -> Strategy {
    let a = LabeledDrafter::new(DRAFTER_A, variants.drafter_a.clone());
    let b = LabeledDrafter::new(DRAFTER_B, variants.drafter_b.clone());
    match name {
        StrategyName::SingleA => Strategy::single(a, tree, mode),
        StrategyName::SingleB => Strategy::single(b, tree, mode),
        StrategyName::MixedSmall => {
            Strategy::single(LabeledDrafter::new("mixed_small", variants.mixed_small.clone()), tree, mode)
        }
        StrategyName::MixedLarge => {
            Strategy::single(LabeledDrafter::new("mixed_large", variants.mixed_large.clone()), tree, mode)
        }
        StrategyName::Averaged => {
            Strategy::single(LabeledDrafter::new("averaged", variants.averaged.clone()), tree, mode)
        }
        StrategyName::RoutedConfidence => Strategy::routed(a, b, RoutingSignal::Confidence, tree, mode),
        StrategyName::RoutedEntropy => Strategy::routed(a, b, RoutingSignal::Entropy, tree, mode),
        StrategyName::Merged => Strategy::merged(a, b, tree, mode),
    }
}

fn stream_id(parts: &[u64]) -> u64 {
    parts.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, p| {
        (h ^ p).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn domain_index(domain: &str) -> u64 {
    u64::from(domain != DOMAIN_A)
}

/// Decodes every prompt of `domain`. Prompt `i` always gets the same rng
/// stream, whatever the strategy.
pub fn decode_domain(
    config: &ExperimentConfig,
    variants: &Variants,
    domains: &Domains,
    strategy: &Strategy,
    domain: &str,
    seed: u64,
) -> Result<Vec<DecodeResult>> {
    domains
        .prompts(domain)
        .par_iter()
        .enumerate()
        .map(|(i, prompt)| {
            let mut rng = sample_rng(seed, stream_id(&[domain_index(domain), i as u64, 17]));
            let mut result = speculative_decode(&variants.target, strategy, prompt, config.eval_length, &mut rng)?;
            for r in &mut result.routing_records {
                r.prompt_domain = domain.to_string();
            }
            Ok(result)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub strategy: StrategyName,
    pub mode: DecodeMode,
    pub domain: String,
    pub prompts: usize,
    pub verifier_calls: usize,
    pub mean_acceptance: f64,
    pub depth_table: BTreeMap<usize, f64>,
    pub entropy: EntropyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub mode: DecodeMode,
    pub domain: String,
    pub verifier_calls: usize,
    pub mean_acceptance: f64,
}

/// Prompt-level routing decisions (the choice made at each prompt's first
/// verifier call) for one signal and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSummary {
    pub signal: RoutingSignal,
    pub mode: DecodeMode,
    pub table: RoutingTable,
    /// Share of prompts routed to the specialist of their own domain.
    pub matched_rate: f64,
    pub records: Vec<RoutingRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub cells: Vec<CellReport>,
    pub sweep: Vec<SweepRow>,
    pub routing: Vec<RoutingSummary>,
}

impl SeedReport {
    pub fn cell(&self, strategy: StrategyName, mode: DecodeMode, domain: &str) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy && c.mode == mode && c.domain == domain)
    }

    /// Mean acceptance over both domains' calls (the 50/50 mixed eval).
    pub fn mixed_acceptance(&self, strategy: StrategyName, mode: DecodeMode) -> Option<f64> {
        let a = self.cell(strategy, mode, DOMAIN_A)?;
        let b = self.cell(strategy, mode, DOMAIN_B)?;
        Some(pooled([(a.mean_acceptance, a.verifier_calls), (b.mean_acceptance, b.verifier_calls)]))
    }

    pub fn sweep_row(&self, lambda: f64, mode: DecodeMode, domain: &str) -> Option<&SweepRow> {
        self.sweep
            .iter()
            .find(|r| r.lambda == lambda && r.mode == mode && r.domain == domain)
    }

    pub fn sweep_acceptance(&self, lambda: f64, mode: DecodeMode, domain: &str) -> Option<f64> {
        self.sweep_row(lambda, mode, domain).map(|r| r.mean_acceptance)
    }

    /// Mixed-eval acceptance of the averaged drafter at `lambda`, pooled
    /// over calls as in [`Self::mixed_acceptance`].
    pub fn sweep_mixed(&self, lambda: f64, mode: DecodeMode) -> Option<f64> {
        let a = self.sweep_row(lambda, mode, DOMAIN_A)?;
        let b = self.sweep_row(lambda, mode, DOMAIN_B)?;
        Some(pooled([(a.mean_acceptance, a.verifier_calls), (b.mean_acceptance, b.verifier_calls)]))
    }

    pub fn routing(&self, signal: RoutingSignal, mode: DecodeMode) -> Option<&RoutingSummary> {
        self.routing.iter().find(|r| r.signal == signal && r.mode == mode)
    }
}

fn pooled(parts: [(f64, usize); 2]) -> f64 {
    let calls: usize = parts.iter().map(|p| p.1).sum();
    parts.iter().map(|(m, n)| m * *n as f64).sum::<f64>() / calls as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
}

fn cell_report(
    strategy: StrategyName,
    mode: DecodeMode,
    domain: &str,
    results: &[DecodeResult],
) -> Result<CellReport> {
    let report = CellReport {
        strategy,
        mode,
        domain: domain.to_string(),
        prompts: results.len(),
        verifier_calls: results.iter().map(|r| r.outcomes.len()).sum(),
        mean_acceptance: acceptance_stats(results)?,
        depth_table: depth_acceptance(results)?,
        entropy: entropy_report(results),
    };
    if report.depth_table.values().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Invariant(format!(
            "depth rate outside [0, 1] in {} / {mode} / {domain}",
            strategy.as_str()
        )));
    }
    Ok(report)
}

fn check_greedy_lossless(
    reference: &[Vec<Token>],
    results: &[DecodeResult],
    strategy: StrategyName,
    domain: &str,
) -> Result<()> {
    for (i, (expected, got)) in reference.iter().zip(results).enumerate() {
        if *expected != got.output_tokens {
            return Err(Error::Invariant(format!(
                "greedy losslessness: {} differs from autoregressive decoding on {domain} prompt {i}",
                strategy.as_str()
            )));
        }
    }
    Ok(())
}

fn matched_specialist(domain: &str) -> &'static str {
    if domain == DOMAIN_A {
        DRAFTER_A
    } else {
        DRAFTER_B
    }
}

/// Runs the whole grid for one seed.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedReport> {
    let domains = generate_domains(config, seed)?;
    let variants = build_variants(config, &domains)?;
    let mut cells = Vec::new();
    let mut routing = Vec::new();

    let greedy_reference: BTreeMap<&str, Vec<Vec<Token>>> = [DOMAIN_A, DOMAIN_B]
        .into_iter()
        .map(|domain| {
            let outs = domains
                .prompts(domain)
                .par_iter()
                .map(|p| {
                    autoregressive_decode(
                        &variants.target,
                        p,
                        config.eval_length,
                        DecodeMode::Greedy,
                        &mut rand::rngs::mock::StepRng::new(0, 0),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((domain, outs))
        })
        .collect::<Result<_>>()?;

    for &name in &config.strategies {
        for &mode in &config.modes {
            let strategy = make_strategy(name, &variants, config.tree, mode);
            let mut first_calls = Vec::new();
            for domain in [DOMAIN_A, DOMAIN_B] {
                let results = decode_domain(config, &variants, &domains, &strategy, domain, seed)?;
                if mode == DecodeMode::Greedy {
                    check_greedy_lossless(&greedy_reference[domain], &results, name, domain)?;
                }
                first_calls.extend(results.iter().filter_map(|r| r.routing_records.first().cloned()));
                cells.push(cell_report(name, mode, domain, &results)?);
            }
            if let crate::decode::StrategyKind::Routed { signal } = strategy.kind() {
                let table = routing_counts(&first_calls)?;
                let matched = first_calls
                    .iter()
                    .filter(|r| r.chosen == matched_specialist(&r.prompt_domain))
                    .count();
                if table.counts.values().map(|row| row.values().sum::<usize>()).sum::<usize>()
                    != 2 * config.prompts_per_domain
                {
                    return Err(Error::Invariant("routing counts do not sum to the prompt count".into()));
                }
                routing.push(RoutingSummary {
                    signal,
                    mode,
                    table,
                    matched_rate: matched as f64 / first_calls.len() as f64,
                    records: first_calls,
                });
            }
        }
    }

    let sweep = run_sweep(config, &variants, &domains, seed)?;
    Ok(SeedReport {
        seed,
        cells,
        sweep,
        routing,
    })
}

/// Acceptance of logit-averaged drafters across the λ grid.
pub fn run_sweep(config: &ExperimentConfig, variants: &Variants, domains: &Domains, seed: u64) -> Result<Vec<SweepRow>> {
    let a = LabeledDrafter::new(DRAFTER_A, variants.drafter_a.clone());
    let b = LabeledDrafter::new(DRAFTER_B, variants.drafter_b.clone());
    let mut rows = Vec::new();
    for &lambda in &config.lambda_grid {
        for &mode in &config.modes {
            let strategy = Strategy::averaged(&a, &b, lambda, config.tree, mode)?;
            for domain in [DOMAIN_A, DOMAIN_B] {
                let results = decode_domain(config, variants, domains, &strategy, domain, seed)?;
                rows.push(SweepRow {
                    lambda,
                    mode,
                    domain: domain.to_string(),
                    verifier_calls: results.iter().map(|r| r.outcomes.len()).sum(),
                    mean_acceptance: acceptance_stats(&results)?,
                });
            }
        }
    }
    Ok(rows)
}

pub fn run_experiments(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let seeds = config
        .seeds
        .iter()
        .map(|s| run_seed(config, *s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: config.clone(),
        seeds,
    })
}

/// λ sweep only, for every seed.
pub fn run_sweep_only(config: &ExperimentConfig) -> Result<Vec<(u64, Vec<SweepRow>)>> {
    config.validate()?;
    config
        .seeds
        .iter()
        .map(|&seed| {
            let domains = generate_domains(config, seed)?;
            let variants = build_variants(config, &domains)?;
            Ok((seed, run_sweep(config, &variants, &domains, seed)?))
        })
        .collect()
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

/// Flat CSV: `seed,mode,strategy,domain,metric,value`.
pub fn report_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("seed,mode,strategy,domain,metric,value\n");
    let mut row = |seed: u64, mode: DecodeMode, strategy: &str, domain: &str, metric: String, value: f64| {
        out.push_str(&format!("{seed},{mode},{strategy},{domain},{metric},{}\n", fmt_value(value)));
    };
    for s in &report.seeds {
        for c in &s.cells {
            let name = c.strategy.as_str();
            row(s.seed, c.mode, name, &c.domain, "mean_acceptance".into(), c.mean_acceptance);
            row(s.seed, c.mode, name, &c.domain, "verifier_calls".into(), c.verifier_calls as f64);
            for (d, r) in &c.depth_table {
                row(s.seed, c.mode, name, &c.domain, format!("depth_{d}_acceptance"), *r);
            }
            let e = &c.entropy;
            for (metric, value) in [
                ("draft_entropy_accepted", e.draft_accepted),
                ("draft_entropy_rejected", e.draft_rejected),
                ("delta_draft_entropy", e.delta_draft),
                ("verifier_entropy_accepted", e.verifier_accepted),
                ("verifier_entropy_rejected", e.verifier_rejected),
                ("delta_verifier_entropy", e.delta_verifier),
            ] {
                if let Some(v) = value {
                    row(s.seed, c.mode, name, &c.domain, metric.into(), v);
                }
            }
        }
        for r in &s.sweep {
            row(s.seed, r.mode, &format!("averaged_lambda_{}", r.lambda), &r.domain, "mean_acceptance".into(), r.mean_acceptance);
        }
        for r in &s.routing {
            let strategy = format!("routed_{}", r.signal);
            for (domain, counts) in &r.table.counts {
                for (specialist, n) in counts {
                    row(s.seed, r.mode, &strategy, domain, format!("routed_to_{specialist}"), *n as f64);
                    row(s.seed, r.mode, &strategy, domain, format!("routed_to_{specialist}_percent"), r.table.percent(domain, specialist));
                }
            }
            row(s.seed, r.mode, &strategy, "all", "matched_rate".into(), r.matched_rate);
        }
    }
    out
}

/// `domain,signal,chosen,score_1,score_2` rows of every prompt-level decision.
pub fn routing_csv(report: &ExperimentReport) -> String {
    let mut out = format!("seed,mode,{}\n", RoutingRecord::CSV_HEADER);
    for s in &report.seeds {
        for r in &s.routing {
            for rec in &r.records {
                out.push_str(&format!("{},{},{}\n", s.seed, r.mode, rec.to_csv_row()));
            }
        }
    }
    out
}

pub fn sweep_csv(rows: &[(u64, Vec<SweepRow>)]) -> String {
    let mut out = String::from("seed,mode,lambda,domain,verifier_calls,mean_acceptance\n");
    for (seed, rs) in rows {
        for r in rs {
            out.push_str(&format!(
                "{seed},{},{},{},{},{}\n",
                r.mode, r.lambda, r.domain, r.verifier_calls, r.mean_acceptance
            ));
        }
    }
    out
}
