use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("PLY parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("unsupported codec: {0}")]
    UnsupportedCodec(String),

    #[error("failed to decode {plane}: {message}")]
    Decode { plane: String, message: String },

    #[error("failed to encode {plane}: {message}")]
    Encode { plane: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn parse(offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn decode(plane: impl Into<String>, msg: impl ToString) -> Self {
        Error::Decode {
            plane: plane.into(),
            message: msg.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
