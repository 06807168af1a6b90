use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A record in an input document failed to parse or validate.
    #[error("record {record}: {message}")]
    Parse { record: usize, message: String },

    /// Two exchanges share the same id.
    #[error("duplicate exchange id {0:?}")]
    DuplicateId(String),

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor shapes incompatible for the named primitive.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A numeric computation produced or encountered an unusable value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(record: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            record,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric(message.into())
    }

    /// Process exit code for CLI reporting: 2 for data/validation problems,
    /// 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::DuplicateId(_)
            | Error::InvalidArgument(_)
            | Error::Io(_) => 2,
            Error::ShapeMismatch { .. } | Error::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
