use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum SpargeError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("column {0} has no observed entries")]
    EmptyColumn(usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dictionary atom {0} has zero norm")]
    ZeroNormAtom(usize),

    #[error("restricted Gram matrix is singular (r2 = 0 with dependent active atoms)")]
    DegenerateGram,

    #[error("trace-quotient denominator {value:e} is below the guard {guard:e}")]
    DegenerateDenominator { value: f64, guard: f64 },

    #[error("supervised graph needs at least two classes when k2 >= 1")]
    SingleClass,

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(&'static str),

    #[error("active set is not strictly complementary at atom {atom} (margin {margin:e})")]
    StrictComplementarity { atom: usize, margin: f64 },

    #[error("singular value decomposition failed to converge")]
    SvdFailure,

    #[error("column {index}: {source}")]
    Column {
        index: usize,
        #[source]
        source: Box<SpargeError>,
    },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<SpargeError>,
    },

    #[error("csv error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("unknown token {token:?} in column {column:?}")]
    UnknownToken { column: String, token: String },

    #[error("category value {value} out of range for channel {channel:?}")]
    CategoryOutOfRange { channel: String, value: f64 },

    #[error("model file version mismatch: found {0:?}")]
    VersionMismatch(String),

    #[error("model file truncated: {0}")]
    Truncated(&'static str),

    #[error("model payload size mismatch: header implies {expected} floats, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("malformed model header: {0}")]
    Header(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SpargeError>;

impl SpargeError {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        SpargeError::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SpargeError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_column(self, index: usize) -> Self {
        SpargeError::Column {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        SpargeError::Iteration {
            iteration,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerics (as opposed to bad input or IO).
    pub fn is_numerical(&self) -> bool {
        match self {
            SpargeError::NonFinite(_)
            | SpargeError::ZeroNormAtom(_)
            | SpargeError::DegenerateGram
            | SpargeError::DegenerateDenominator { .. }
            | SpargeError::RankDeficient(_)
            | SpargeError::StrictComplementarity { .. }
            | SpargeError::SvdFailure => true,
            SpargeError::Column { source, .. } | SpargeError::Iteration { source, .. } => {
                source.is_numerical()
            }
            _ => false,
        }
    }
}
