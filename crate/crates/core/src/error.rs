use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context} at line {line}: {message}")]
    Parse {
        context: String,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {0} has no numeric sentiment value")]
    NoNumericValue(&'static str),

    #[error("training set is missing class {0}")]
    MissingClass(&'static str),

    #[error("no transferable attribute: the opposite-style pool is empty")]
    EmptyPool,

    #[error("target vocabulary size {requested} is too small (base alphabet is {base})")]
    VocabTooSmall { requested: usize, base: usize },

    #[error("unknown token id {0}")]
    UnknownId(u32),

    #[error("decoded bytes are not valid utf-8")]
    InvalidUtf8,

    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("response is not a member of the candidate pool")]
    NotInPool,

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("not enough training examples: {have} (need at least {need})")]
    TooFewExamples { have: usize, need: usize },

    #[error("candidate pool is empty")]
    EmptyIndex,

    #[error("index was built by checkpoint {index}, but the loaded checkpoint is {model}")]
    StaleIndex { index: String, model: String },

    #[error("reports were computed on different prompt sets")]
    PromptMismatch,

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            line,
            message: message.into(),
        }
    }
}
