use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input files, malformed data, invalid configuration.
    Input,
    /// The data were readable but a model could not be estimated.
    Estimation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("empty input stream")]
    EmptyInput,
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: duplicate observation for county `{county}` at period {period}")]
    DuplicateRow {
        row: usize,
        county: String,
        period: String,
    },
    #[error("row {row}, column `{column}`: non-numeric value {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: cannot parse period {value:?} (expected YYYY-MM or YYYY)")]
    BadPeriod { row: usize, value: String },
    #[error("row {row}: mixed period frequencies in one dataset")]
    MixedFrequency { row: usize },
    #[error("row {row}: empty county identifier")]
    EmptyCounty { row: usize },
    #[error("unknown series `{0}`")]
    UnknownSeries(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("unknown county `{0}`")]
    UnknownCounty(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design is empty after applying filter `{filter}`")]
    EmptyDesign { filter: String },
    #[error("duplicate regressor column `{0}`")]
    DuplicateColumn(String),
    #[error("underidentified design: {rows} rows for {params} parameters (incl. absorbed effects)")]
    Underidentified { rows: usize, params: usize },
    #[error("rank deficient design: column `{column}` is linearly dependent on {dependent_on:?}")]
    RankDeficient {
        column: String,
        dependent_on: Vec<String>,
    },
    #[error("fixed-effect absorption did not converge after {iterations} sweeps (max group mean {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("horizon {h}: {source}")]
    Horizon {
        h: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("jackknife: {failed} of {attempted} draws failed, above the 10% limit")]
    JackknifeFailures { failed: usize, attempted: usize },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::EmptyDesign { .. }
            | Error::DuplicateColumn(_)
            | Error::Underidentified { .. }
            | Error::RankDeficient { .. }
            | Error::NoConvergence { .. }
            | Error::JackknifeFailures { .. } => ErrorKind::Estimation,
            Error::Horizon { source, .. } => source.kind(),
            _ => ErrorKind::Input,
        }
    }

    pub(crate) fn at_horizon(self, h: usize) -> Error {
        match self {
            e @ Error::Horizon { .. } => e,
            e => Error::Horizon {
                h,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
