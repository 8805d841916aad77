use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("token out of vocabulary: {token} >= {vocab}")]
    TokenOutOfVocabulary { token: u32, vocab: usize },
    #[error("prefix too short: need {needed} tokens, got {got}")]
    PrefixTooShort { needed: usize, got: usize },
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabularyTooSmall(usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("top-k out of range: k = {k}, vocabulary = {vocab}")]
    TopKOutOfRange { k: usize, vocab: usize },
    #[error("models are incompatible: {0}")]
    IncompatibleModels(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid node id {0}")]
    InvalidNode(usize),
    #[error("roots differ: {0} vs {1}")]
    RootsDiffer(u32, u32),
    #[error("committed prefix does not end with the tree root token")]
    RootMismatch,
    #[error("drafted token with zero draft probability")]
    ZeroDraftProbability,
    #[error("empty tree")]
    EmptyTree,
    #[error("routing needs at least two trees, got {0}")]
    TooFewTrees(usize),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("enumeration bound exceeded: {0} outcomes")]
    EnumerationTooLarge(u128),
    #[error("mismatched supports: {0} vs {1}")]
    MismatchedSupports(usize, usize),
    #[error("greedy mode has no sampling distribution; compare outputs exactly instead")]
    GreedyNotSampled,
    #[error("malformed packed tree: {0}")]
    MalformedTree(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("parse error: {0}")]
    Parse(String),
}
