use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("missing column `{column}` in {path}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("zero usable rows in {0}")]
    ZeroUsableRows(PathBuf),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("vocab_size {requested} is smaller than the {required} base symbols")]
    VocabTooSmall { requested: usize, required: usize },
    #[error("invalid token id {0}")]
    InvalidTokenId(u32),
    #[error("empty vocabulary after min_df filtering")]
    EmptyVocabulary,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid label {label} for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("training data must contain at least two classes")]
    SingleClass,
    #[error("non-finite feature value in row {row}")]
    NonFinite { row: usize },
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown key `{key}`{}", .suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey { key: String, suggestion: Option<String> },
    #[error("masking produced no masked positions on any sequence")]
    NoMaskedPositions,
    #[error("base classifier {index} failed: {source}")]
    Base {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("leakage detected: row {row} was in the training set of base {base}, fold {fold}")]
    Leakage { row: usize, base: usize, fold: usize },
    #[error("malformed model file: {0}")]
    Format(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Wraps an error with a pipeline stage label.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage { stage: stage.into(), source: Box::new(self) }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
