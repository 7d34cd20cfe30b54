use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid keypoint: {0}")]
    InvalidKeypoint(String),
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set is degenerate: {0}")]
    DegenerateTrainingSet(String),
    #[error("invalid dexel pair ({0}, {1})")]
    InvalidPair(usize, usize),
    #[error("symbol {symbol} outside alphabet of size {alphabet}")]
    Symbol { symbol: usize, alphabet: usize },
    #[error("bitstream truncated")]
    TruncatedBitstream,
    #[error("corrupt bitstream: {0}")]
    CorruptBitstream(String),
    #[error("stream error: {0}")]
    Stream(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("empty group of pictures")]
    EmptyGop,
    #[error("need at least 2 candidates, got {0}")]
    InsufficientCandidates(usize),
    #[error("need at least 4 matches, got {0}")]
    InsufficientMatches(usize),
    #[error("average precision undefined without relevant documents")]
    UndefinedAp,
}

impl Error {
    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    /// Stable snake_case identifier used in CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidKeypoint(_) => "invalid_keypoint",
            Error::Format { .. } => "format_error",
            Error::Json(_) => "json_error",
            Error::Io(_) => "io_error",
            Error::Config(_) => "config_error",
            Error::EmptyTrainingSet => "empty_training_set",
            Error::DegenerateTrainingSet(_) => "degenerate_training_set",
            Error::InvalidPair(..) => "invalid_pair",
            Error::Symbol { .. } => "symbol_error",
            Error::TruncatedBitstream => "truncated_bitstream",
            Error::CorruptBitstream(_) => "corrupt_bitstream",
            Error::Stream(_) => "stream_error",
            Error::Dimension { .. } => "dimension_error",
            Error::EmptyGop => "empty_gop",
            Error::InsufficientCandidates(_) => "insufficient_candidates",
            Error::InsufficientMatches(_) => "insufficient_matches",
            Error::UndefinedAp => "undefined_ap",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(e) => Error::Io(e),
            other => Error::Config(format!("csv: {other:?}")),
        }
    }
}
