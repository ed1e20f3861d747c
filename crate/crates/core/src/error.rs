use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the domain of an operation (e.g. grade points above 100).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed input row. `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("ids referenced but missing from roster: {}", .0.join(", "))]
    OrphanIds(Vec<String>),

    #[error("unknown student `{0}`")]
    UnknownStudent(String),

    #[error("schema mismatch: expected {expected} features, got {got}")]
    SchemaMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing outcomes: {0}")]
    MissingOutcomes(String),

    #[error("computation budget exceeded: {0}")]
    Budget(String),

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
