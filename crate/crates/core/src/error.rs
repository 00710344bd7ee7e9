//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {msg}")]
    MalformedRecord {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("duplicate news id `{0}`")]
    DuplicateId(String),

    #[error("news item `{id}`: {msg}")]
    InvalidNewsItem { id: String, msg: String },

    #[error("counterpart_of `{target}` referenced by `{id}` does not resolve to an L0 item")]
    DanglingCounterpart { id: String, target: String },

    #[error("interaction references unknown news id `{0}`")]
    UnknownNewsId(String),

    #[error("duplicate counterpart claim for ({l0}, {generator}, {mode})")]
    DuplicateCounterpart {
        l0: String,
        generator: String,
        mode: String,
    },

    #[error("missing {mode} counterpart of `{l0}` for generator `{generator}`")]
    MissingCounterpart {
        l0: String,
        generator: String,
        mode: String,
    },

    #[error("candidate pool too small: needed {needed} {veracity} items, only {available} eligible")]
    PoolExhausted {
        veracity: String,
        needed: usize,
        available: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("generated id `{0}` found in a human-only phase input")]
    GeneratedIdInPhase0(String),

    #[error("no positive labels for selector")]
    NoPositives,

    #[error("target `{0}` not present in its candidate list")]
    TargetNotInCandidates(String),

    #[error("cutoff {k} exceeds list length {len}")]
    CutoffTooLarge { k: usize, len: usize },

    #[error("RRA undefined: fake-side metric is zero")]
    RraUndefined,

    #[error("baseline report required but not provided")]
    MissingBaseline,

    #[error("non-finite loss in batch {batch}: {msg}")]
    Diverged { batch: usize, msg: String },

    #[error("embedding table: {0}")]
    Embedding(String),

    #[error("token `{0}` not in closed vocabulary")]
    UnknownToken(String),

    #[error("perplexity missing for news id `{0}`")]
    MissingPerplexity(String),

    #[error("need at least 3 paired observations, got {0}")]
    TooFewPairs(usize),

    #[error("rank correlation undefined: {0} values are all tied")]
    NoRankVariance(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code class: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Diverged { .. } | Error::RraUndefined => 4,
            Error::DimMismatch(_) => 4,
            _ => 3,
        }
    }
}
