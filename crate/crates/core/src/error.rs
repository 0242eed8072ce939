use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot ingest {}: {reason}", path.display())]
    Ingest { path: PathBuf, reason: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("POS tags required")]
    PosTagsRequired,
    #[error("no keyword candidate")]
    NoKeywordCandidate,
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("invalid class {value} for attribute `{attribute}`")]
    InvalidClass { attribute: String, value: String },
    #[error("non-finite gradient in term `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("labeler training needs at least two classes, found {0}")]
    SingleClass(usize),
    #[error("too many prior samples decoded to empty sentences ({0})")]
    EmptyDecode(usize),
}
