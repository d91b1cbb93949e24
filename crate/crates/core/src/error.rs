use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed Standard MIDI File content.
    #[error("SMF parse error at byte {offset}: {message}")]
    Smf { offset: usize, message: String },

    /// Malformed note-table CSV row. `line` is 1-based and counts the header.
    #[error("note table line {line}: {message}")]
    NoteTable { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("correlation is undefined for constant input")]
    UndefinedCorrelation,

    /// KL divergence requested between models of different families.
    #[error("cannot compare a {left} model with a {right} model")]
    ModelMismatch {
        left: &'static str,
        right: &'static str,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}
