use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("rank-deficient matrix: {0}")]
    RankDeficient(String),

    #[error("columns are not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("zero matrix has no factors")]
    ZeroMatrix,

    #[error("degrees of freedom exhausted: residual df = {0}")]
    DfExhausted(f64),

    #[error("index out of range: {index} (valid: 0..{len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("test direction is not orthogonal to the column covariates (|Z^T s| = {0:.3e})")]
    NotOrthogonal(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable code, shared by the CLI and the C interface.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimMismatch(_) => "DIM_MISMATCH",
            Error::NonFinite { .. } => "NON_FINITE",
            Error::RankDeficient(_) => "RANK_DEFICIENT",
            Error::NotOrthonormal(_) => "NOT_ORTHONORMAL",
            Error::ZeroMatrix => "ZERO_MATRIX",
            Error::DfExhausted(_) => "DF_EXHAUSTED",
            Error::IndexOutOfRange { .. } => "INDEX_OUT_OF_RANGE",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
            Error::NotOrthogonal(_) => "NOT_ORTHOGONAL",
            Error::Parse(_) => "PARSE_ERROR",
            Error::DuplicateId(_) => "DUPLICATE_ID",
            Error::IdMismatch(_) => "ID_MISMATCH",
            Error::Io(_) => "IO_ERROR",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Parse(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
