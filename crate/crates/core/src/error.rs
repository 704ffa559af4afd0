use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// [`Error::code`] gives a stable, machine-parseable identifier used by the
/// CLI error line and by the C ABI status codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("index {index} out of range for {what} of size {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("rank deficient: requested latent dimension {requested} but the data supports at most {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("exact enumeration limited to {limit} players, got {players}; use permutation sampling")]
    EnumerationLimit { players: usize, limit: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dead coordinate {coordinate}: Jacobian column is zero but its Shapley value is {value}")]
    DeadCoordinate { coordinate: usize, value: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "E_SHAPE",
            Error::IndexOutOfRange { .. } => "E_INDEX",
            Error::Dimension(_) => "E_DIMENSION",
            Error::RankDeficient { .. } => "E_RANK",
            Error::EnumerationLimit { .. } => "E_ENUMERATION_LIMIT",
            Error::Config(_) => "E_CONFIG",
            Error::DeadCoordinate { .. } => "E_DEAD_COORDINATE",
            Error::Contract(_) => "E_CONTRACT",
            Error::Format { .. } => "E_FORMAT",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn format(field: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
