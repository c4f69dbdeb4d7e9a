use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported connectivity {0}, expected 4, 8 or 16")]
    Connectivity(usize),
    #[error("degenerate scanning step ({0}, {1})")]
    DegenerateStep(i32, i32),
    #[error("label count {0} outside 1..=256")]
    LabelCount(usize),
    #[error("label {label} out of range at node {node} (label count {labels})")]
    LabelOutOfRange { node: usize, label: usize, labels: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("instance too large for exhaustive oracle: {0}")]
    TooLarge(String),
    #[error("malformed {kind} data: {msg}")]
    Format { kind: &'static str, msg: String },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn format_err(kind: &'static str, msg: impl Into<String>) -> Error {
    Error::Format { kind, msg: msg.into() }
}
