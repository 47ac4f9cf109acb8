use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("input is not valid UTF-8: {0}")]
    Encoding(#[from] std::str::Utf8Error),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("infeasible dataset: {0}")]
    Infeasible(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unexpected end of data: {0}")]
    Length(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sentences missing from embedding file: {}", .0.join(", "))]
    MissingSentences(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by malformed input files.
    pub fn is_format(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Encoding(_)
                | Error::Format(_)
                | Error::Length(_)
                | Error::Validation(_)
                | Error::Json(_)
        )
    }
}
