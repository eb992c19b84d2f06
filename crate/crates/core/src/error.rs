use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure category, used by the CLI to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Fit,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: cannot parse `{value}` in column `{column}` as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("row {row}: negative value {value} in column `{column}`")]
    NegativeValue { row: usize, column: String, value: f64 },

    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("non-positive input: {0}")]
    NonPositive(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("numeric overflow evaluating {0}")]
    Overflow(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("rule file line {line}: {message}")]
    RuleFile { line: usize, message: String },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) => ErrorKind::Usage,
            Error::Fit(_) => ErrorKind::Fit,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
