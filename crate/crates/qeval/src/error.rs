//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown language pair {0:?}")]
    UnknownPair(String),
    #[error("column {column:?} not found for {what}")]
    MissingColumn { column: String, what: String },
    #[error("unknown word tag {0:?} (expected OK or BAD)")]
    UnknownTag(String),
    #[error("instance {id}: da_score {score} outside [0,100]")]
    ScoreOutOfRange { id: String, score: f64 },
    #[error("instance {0}: source, mt and reference must be non-empty")]
    EmptyField(String),
    #[error("instance {id}: error word {word:?} is not a token of the MT output")]
    ErrorWordNotInOutput { id: String, word: String },
    #[error("split fractions sum to {0}, expected 1.0")]
    BadSplitFractions(f64),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("corpus line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template} requires the {block} block")]
    MissingBlock { template: String, block: String },
    #[error("shots are only accepted for T8, got {0} for {1}")]
    UnexpectedShots(usize, String),
    #[error("T8 requires exactly 5 shots, got {0}")]
    WrongShotCount(usize),
    #[error("T8 requires shots; none were supplied")]
    MissingShots,
    #[error("cannot sample shots from an empty pool")]
    EmptyPool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("http error from {backend}: {message}")]
    Http { backend: String, message: String },
    #[error("{backend}: request failed after {attempts} attempts: {message}")]
    RetriesExhausted {
        backend: String,
        attempts: u32,
        message: String,
    },
    #[error("{backend}: response missing completion text: {message}")]
    BadResponse { backend: String, message: String },
    #[error("backend config: {0}")]
    Config(String),
    #[error("auth variable {0} is not set")]
    MissingAuth(String),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("no gold score for instance {0}")]
    UnknownInstance(String),
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("run log {path} does not match this config: {reason}")]
    ConfigMismatch { path: String, reason: String },
    #[error("run log {path}: line {line}: {reason}")]
    BadLog {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}
