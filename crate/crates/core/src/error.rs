use std::path::PathBuf;

/// Errors produced by the engine and its subsystems.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("position {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("buffer length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("too many players for exact computation: {n} > {max}")]
    TooManyPlayers { n: usize, max: usize },

    #[error("empty input buffer")]
    EmptyInput,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("mutator stack inconsistent: {0}")]
    InvalidStack(String),

    #[error("invalid trim ranges: {0}")]
    InvalidRanges(String),

    #[error("non-finite reward: {0}")]
    NonFiniteReward(f64),

    #[error("empty score array")]
    EmptyScores,

    #[error("target execution failed: {0}")]
    Execution(String),

    #[error("target timed out after {0} ms")]
    Timeout(u64),

    #[error("malformed edge sidecar {path} line {line}: {reason}")]
    MalformedSidecar {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus metadata error: {0}")]
    CorpusFormat(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
