use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("row {row}, field `{field}`: {message}")]
    Parse {
        row: usize,
        field: String,
        message: String,
    },

    #[error("row {row}: series has {found} values, expected {expected}")]
    RaggedSeries {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: duplicate coordinates ({x_km}, {y_km}) already used by row {first_row}")]
    DuplicateCoordinates {
        row: usize,
        first_row: usize,
        x_km: f64,
        y_km: f64,
    },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("mask excludes every cell")]
    EmptySelection,

    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("series too short: {0} samples (need at least 2)")]
    SeriesTooShort(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("{0} is undefined for this graph")]
    UndefinedMetric(&'static str),

    #[error("graphs have different node sets ({0} vs {1} nodes)")]
    NodeSetMismatch(usize, usize),

    #[error("odd degree sum {0}")]
    OddDegreeSum(usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad input files or configuration, as
    /// opposed to failures inside a computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::EmptyInput(_)
            | Error::MalformedHeader(_)
            | Error::Parse { .. }
            | Error::RaggedSeries { .. }
            | Error::DuplicateCoordinates { .. }
            | Error::InvalidMask(_)
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Json(_)
            | Error::Csv(_) => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
