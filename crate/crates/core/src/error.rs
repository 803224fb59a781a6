use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands whose shapes must conform do not.
    #[error("shape mismatch in {op}: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    ShapeMismatch {
        op: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// A structural configuration constraint was violated.
    #[error("config error: {0}")]
    Config(String),

    /// A value is outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced NaN or Inf where a finite value is required.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A binary or JSON payload failed structural validation.
    #[error("format error: {0}")]
    Format(String),

    /// An operation requiring data received none.
    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing parameter block: {0}")]
    MissingParam(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    ) -> Self {
        Error::ShapeMismatch {
            op,
            left_rows: left.0,
            left_cols: left.1,
            right_rows: right.0,
            right_cols: right.1,
        }
    }
}
