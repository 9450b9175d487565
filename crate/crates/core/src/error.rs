use thiserror::Error;

use crate::dataset::{NodeId, SeriesId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("no data rows")]
    NoDataRows,

    #[error("duplicate time index {t} for node {node}")]
    DuplicateTime { node: NodeId, t: u32 },

    #[error("series {node} has {len} observations, more than the maximum of {max}")]
    SeriesTooLong { node: NodeId, len: usize, max: usize },

    #[error("series {0} appears more than once and cannot be written in the CSV layout")]
    DuplicateSeries(SeriesId),

    #[error("dimension mismatch: expected {expected} attributes, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("attribute `{attribute}` has {count} observed values, at least {required} are needed")]
    TooFewObservations {
        attribute: String,
        count: usize,
        required: usize,
    },

    #[error("need at least {required} complete observations to fit a Gaussian model, found {found}")]
    TooFewCompleteCases { required: usize, found: usize },

    #[error("cannot winsorize missing value (series {series}, t={t}, attribute {attribute})")]
    WinsorizeMissing {
        series: usize,
        t: u32,
        attribute: usize,
    },

    #[error("no complete observations")]
    NoCompleteObservations,

    #[error("histograms were built from different binning specs")]
    SpecMismatch,

    #[error("empty ideal set: no series is below {threshold}% for every glitch type")]
    EmptyIdealSet { threshold: f64 },

    #[error("invalid rule: {0}")]
    InvalidRule(String),

    #[error("transportation problem is infeasible (unbalanced masses)")]
    Infeasible,

    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
