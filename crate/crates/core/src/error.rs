use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A malformed profile or report file. `row` is 1-based and counts the header.
    #[error("format error at row {row}: {message}")]
    Format { row: usize, message: String },

    #[error(
        "exhaustive search refused: {actions} selectable actions exceeds the cap of {cap} (raise it with --cap)"
    )]
    CapExceeded { actions: usize, cap: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
