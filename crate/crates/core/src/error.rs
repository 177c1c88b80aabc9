use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("empty distribution")]
    EmptyDistribution,
    #[error("distribution does not normalize: |sum p - 1| = {deviation:e}")]
    NotNormalized { deviation: f64 },
    #[error("invalid log-probability {value} at index {index}")]
    InvalidLogProb { index: usize, value: f64 },
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("prefix is already complete (contains EOS)")]
    CompletedPrefix,
    #[error("invalid caption: {0}")]
    InvalidCaption(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid reference game: {0}")]
    InvalidContext(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no completed caption")]
    NoCompletedCaption,
    #[error("prefix impossible under all items")]
    PrefixImpossible,
    #[error(
        "exact decoding would score {requested} prefixes per step (limit {limit}); \
         use sub-sampled decoding with a candidate pool instead"
    )]
    GuardExceeded { requested: usize, limit: usize },
    #[error("infeasible world constraints: {0}")]
    InfeasibleWorld(String),
    #[error("empty problem list")]
    EmptyProblems,
    #[error("scorer failure: {0}")]
    Scorer(String),
    #[error("serialization: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Serde(err.to_string())
    }
}
