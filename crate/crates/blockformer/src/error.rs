//! Crate-wide error type and exit-code mapping for the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric overflow in block ({block_row}, {block_col}): {detail}")]
    NumericOverflow {
        block_row: usize,
        block_col: usize,
        detail: String,
    },

    #[error("corrupted data: {0}")]
    Corruption(String),

    #[error("name collision: set '{0}' already exists")]
    NameCollision(String),

    #[error("pipeline wiring: {0}")]
    Wiring(String),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("verification failed: max_abs {max_abs:e} exceeds tolerance {tolerance:e}")]
    VerificationFailed { max_abs: f64, tolerance: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 0 is success, 1 verification failure,
    /// 2 usage or config errors, 3 IO and corruption.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::VerificationFailed { .. } => 1,
            Error::InvalidArgument(_)
            | Error::Shape(_)
            | Error::NumericOverflow { .. }
            | Error::NameCollision(_)
            | Error::Wiring(_)
            | Error::Config(_) => 2,
            Error::Corruption(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
