use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input data.
    Input,
    /// Input is well formed but violates a statistical precondition.
    Statistical,
    /// Invalid simulation or run configuration.
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("uncovered strata: {}", .0.join(", "))]
    UncoveredStrata(Vec<String>),

    #[error("insufficient exchangeable units: {0}")]
    InsufficientUnits(String),

    #[error("{0}")]
    Precondition(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("replicate {rep}: {source}")]
    Replicate {
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::MissingColumn(_) | Error::Row { .. } | Error::Input(_) | Error::Csv(_) => ErrorKind::Input,
            Error::Config { .. } => ErrorKind::Config,
            Error::Replicate { source, .. } => source.kind(),
            _ => ErrorKind::Statistical,
        }
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config { field: field.to_string(), reason: reason.into() }
    }
}
