//! Table-based next-token models.
//!
//! An [`NGramModel`] maps every length-`order` context to a logit vector over
//! the vocabulary. Contexts that were never observed fall back to the uniform
//! distribution, so every query yields a valid [`Categorical`]. The same type
//! plays both roles in speculative decoding: the cheap drafter and the target
//! whose output distribution must be preserved.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

/// Logit used in place of `ln 0`. `exp` of anything this far below the row
/// maximum underflows to exactly zero.
pub const MIN_LOGIT: f64 = -1.0e4;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary(usize);

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::VocabularyTooSmall(size));
        }
        Ok(Self(size))
    }

    pub fn size(self) -> usize {
        self.0
    }

    pub fn contains(self, token: Token) -> bool {
        (token as usize) < self.0
    }
}

/// A probability vector over token ids `0..len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no entries".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {bad}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("sums to {total}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights. All-zero weights are rejected.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "cannot normalize weights with total {total}"
            )));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(size: usize) -> Self {
        Self {
            probs: vec![1.0 / size as f64; size],
        }
    }

    pub fn one_hot(size: usize, token: Token) -> Self {
        let mut probs = vec![0.0; size];
        probs[token as usize] = 1.0;
        Self { probs }
    }

    pub fn softmax(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self {
            probs: exps.into_iter().map(|e| e / total).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: Token) -> f64 {
        self.probs.get(token as usize).copied().unwrap_or(0.0)
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    pub fn argmax(&self) -> Token {
        argmax_token(self)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Token {
        sample(self, rng)
    }

    /// Token ids sorted by descending probability, ties by lower id.
    pub fn ranked(&self) -> Vec<Token> {
        let mut ids: Vec<Token> = (0..self.probs.len() as Token).collect();
        ids.sort_by(|a, b| {
            self.probs[*b as usize]
                .total_cmp(&self.probs[*a as usize])
                .then(a.cmp(b))
        });
        ids
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(dist: &Categorical) -> f64 {
    let h: f64 = dist
        .probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    h.max(0.0)
}

/// Lowest token id among the maxima.
pub fn argmax_token(dist: &Categorical) -> Token {
    let mut best = 0usize;
    for (i, p) in dist.probs.iter().enumerate() {
        if *p > dist.probs[best] {
            best = i;
        }
    }
    best as Token
}

/// Inverse-CDF draw in ascending token-id order.
pub fn sample<R: Rng + ?Sized>(dist: &Categorical, rng: &mut R) -> Token {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last_supported = 0usize;
    for (i, p) in dist.probs.iter().enumerate() {
        if *p > 0.0 {
            last_supported = i;
            cumulative += p;
            if u < cumulative {
                return i as Token;
            }
        }
    }
    // rounding left u above the accumulated total
    last_supported as Token
}

/// Exact minimizer of the top-K distillation cross-entropy over the simplex:
/// the target restricted to its `k` most likely tokens and renormalized.
/// Ties at the cut are broken toward lower token ids.
pub fn distill_topk(target: &Categorical, k: usize) -> Result<Categorical> {
    if k == 0 || k > target.len() {
        return Err(Error::TopKOutOfRange {
            k,
            vocab: target.len(),
        });
    }
    let keep: Vec<Token> = target.ranked().into_iter().take(k).collect();
    let mass: f64 = keep.iter().map(|t| target.prob(*t)).sum();
    let mut probs = vec![0.0; target.len()];
    if mass > 0.0 {
        for t in keep {
            probs[t as usize] = target.prob(t) / mass;
        }
    } else {
        // the kept tokens carry no mass; spread uniformly over them
        for t in &keep {
            probs[*t as usize] = 1.0 / k as f64;
        }
    }
    Ok(Categorical { probs })
}

/// A labelled set of token sequences drawn from one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainCorpus {
    pub domain_label: String,
    pub vocab: Vocabulary,
    pub sequences: Vec<Vec<Token>>,
}

impl DomainCorpus {
    pub fn new(
        domain_label: impl Into<String>,
        vocab: Vocabulary,
        sequences: Vec<Vec<Token>>,
    ) -> Result<Self> {
        for seq in &sequences {
            if let Some(bad) = seq.iter().find(|t| !vocab.contains(**t)) {
                return Err(Error::TokenOutOfVocabulary {
                    token: *bad,
                    vocab: vocab.size(),
                });
            }
        }
        Ok(Self {
            domain_label: domain_label.into(),
            vocab,
            sequences,
        })
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Concatenation of two corpora under a new label.
    pub fn concat(&self, other: &DomainCorpus, label: impl Into<String>) -> Result<Self> {
        if self.vocab != other.vocab {
            return Err(Error::IncompatibleModels("corpus vocabularies differ".into()));
        }
        let mut sequences = self.sequences.clone();
        sequences.extend(other.sequences.iter().cloned());
        Ok(Self {
            domain_label: label.into(),
            vocab: self.vocab,
            sequences,
        })
    }

    /// One sequence per line, whitespace-separated decimal token ids.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for seq in &self.sequences {
            let line: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(label: impl Into<String>, vocab: Vocabulary, text: &str) -> Result<Self> {
        let mut sequences = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let seq = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<Token>().map_err(|e| {
                        Error::Parse(format!("line {}: {tok:?}: {e}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            sequences.push(seq);
        }
        Self::new(label, vocab, sequences)
    }
}

/// Conditional next-token model over fixed-length contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vocabulary,
    smoothing_alpha: f64,
    table: BTreeMap<Vec<Token>, Vec<f64>>,
}

impl NGramModel {
    pub fn from_table(
        order: usize,
        vocab: Vocabulary,
        smoothing_alpha: f64,
        table: BTreeMap<Vec<Token>, Vec<f64>>,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("order must be at least 1".into()));
        }
        for (ctx, logits) in &table {
            if ctx.len() != order {
                return Err(Error::InvalidParameter(format!(
                    "context {ctx:?} has length {} but order is {order}",
                    ctx.len()
                )));
            }
            if let Some(bad) = ctx.iter().find(|t| !vocab.contains(**t)) {
                return Err(Error::TokenOutOfVocabulary {
                    token: *bad,
                    vocab: vocab.size(),
                });
            }
            if logits.len() != vocab.size() || logits.iter().any(|l| !l.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "context {ctx:?} needs {} finite logits",
                    vocab.size()
                )));
            }
        }
        Ok(Self {
            order,
            vocab,
            smoothing_alpha,
            table,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn smoothing_alpha(&self) -> f64 {
        self.smoothing_alpha
    }

    pub fn table(&self) -> &BTreeMap<Vec<Token>, Vec<f64>> {
        &self.table
    }

    pub fn logits(&self, context: &[Token]) -> Option<&[f64]> {
        self.table.get(context).map(Vec::as_slice)
    }

    /// Distribution for the last `order` tokens of `prefix`.
    pub fn next_distribution(&self, prefix: &[Token]) -> Result<Categorical> {
        if prefix.len() < self.order {
            return Err(Error::PrefixTooShort {
                needed: self.order,
                got: prefix.len(),
            });
        }
        let context = &prefix[prefix.len() - self.order..];
        Ok(match self.table.get(context) {
            Some(logits) => Categorical::softmax(logits),
            None => Categorical::uniform(self.vocab.size()),
        })
    }
}

/// Smoothed maximum-likelihood counts, stored as log-probabilities.
pub fn train_ngram(corpus: &DomainCorpus, order: usize, smoothing_alpha: f64) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::InvalidParameter("order must be at least 1".into()));
    }
    if !(smoothing_alpha >= 0.0) || !smoothing_alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "smoothing alpha must be a non-negative number, got {smoothing_alpha}"
        )));
    }
    if corpus.sequences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = corpus.vocab;
    let mut counts: BTreeMap<Vec<Token>, Vec<f64>> = BTreeMap::new();
    for seq in &corpus.sequences {
        if let Some(bad) = seq.iter().find(|t| !vocab.contains(**t)) {
            return Err(Error::TokenOutOfVocabulary {
                token: *bad,
                vocab: vocab.size(),
            });
        }
        if seq.len() < order + 1 {
            return Err(Error::InvalidParameter(format!(
                "sequence of length {} is shorter than order + 1 = {}",
                seq.len(),
                order + 1
            )));
        }
        for window in seq.windows(order + 1) {
            let row = counts
                .entry(window[..order].to_vec())
                .or_insert_with(|| vec![0.0; vocab.size()]);
            row[window[order] as usize] += 1.0;
        }
    }
    let denominator_extra = smoothing_alpha * vocab.size() as f64;
    let table = counts
        .into_iter()
        .map(|(ctx, row)| {
            let total: f64 = row.iter().sum::<f64>() + denominator_extra;
            let log_total = total.ln();
            let logits = row
                .into_iter()
                .map(|c| {
                    let numerator = c + smoothing_alpha;
                    if numerator > 0.0 {
                        (numerator.ln() - log_total).max(MIN_LOGIT)
                    } else {
                        MIN_LOGIT
                    }
                })
                .collect();
            (ctx, logits)
        })
        .collect();
    NGramModel::from_table(order, vocab, smoothing_alpha, table)
}

/// Pointwise logit interpolation `lambda * a + (1 - lambda) * b`. A context
/// missing from one table contributes all-zero (uniform) logits.
pub fn average_models(a: &NGramModel, b: &NGramModel, lambda: f64) -> Result<NGramModel> {
    if a.order != b.order {
        return Err(Error::IncompatibleModels(format!(
            "orders {} and {}",
            a.order, b.order
        )));
    }
    if a.vocab != b.vocab {
        return Err(Error::IncompatibleModels(format!(
            "vocabularies {} and {}",
            a.vocab.size(),
            b.vocab.size()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0, 1]")));
    }
    let contexts: BTreeSet<&Vec<Token>> = a.table.keys().chain(b.table.keys()).collect();
    let zeros = vec![0.0; a.vocab.size()];
    let table = contexts
        .into_iter()
        .map(|ctx| {
            let la = a.table.get(ctx).unwrap_or(&zeros);
            let lb = b.table.get(ctx).unwrap_or(&zeros);
            let merged = if lambda == 1.0 {
                la.clone()
            } else if lambda == 0.0 {
                lb.clone()
            } else {
                la.iter()
                    .zip(lb)
                    .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
                    .collect()
            };
            (ctx.clone(), merged)
        })
        .collect();
    let alpha = lambda * a.smoothing_alpha + (1.0 - lambda) * b.smoothing_alpha;
    NGramModel::from_table(a.order, a.vocab, alpha, table)
}

/// On-disk model layout: order, vocabulary size and context-to-logit entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub order: usize,
    pub vocab_size: usize,
    pub smoothing_alpha: f64,
    pub entries: Vec<ModelEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEntry {
    pub context: Vec<Token>,
    pub logits: Vec<f64>,
}

impl From<&NGramModel> for ModelFile {
    fn from(model: &NGramModel) -> Self {
        Self {
            order: model.order,
            vocab_size: model.vocab.size(),
            smoothing_alpha: model.smoothing_alpha,
            entries: model
                .table
                .iter()
                .map(|(context, logits)| ModelEntry {
                    context: context.clone(),
                    logits: logits.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for NGramModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let vocab = Vocabulary::new(file.vocab_size)?;
        let table = file
            .entries
            .into_iter()
            .map(|e| (e.context, e.logits))
            .collect();
        NGramModel::from_table(file.order, vocab, file.smoothing_alpha, table)
    }
}
