use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("schema error: no column for role `{role}` (expected header `{column}`)")]
    MissingColumn { role: &'static str, column: String },

    #[error("parse error at row {row}, column `{column}`: cannot read {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("cycle {cycle} of cell `{cell}` does not exist")]
    UnknownCycle { cell: String, cycle: u32 },

    #[error("cell `{0}` does not exist")]
    UnknownCell(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("degenerate spread in {0}")]
    DegenerateSpread(String),

    #[error("cycle {cycle} of cell `{cell}` has {samples} sample(s); at least 2 are required")]
    ShortCycle {
        cell: String,
        cycle: u32,
        samples: usize,
    },

    #[error("no positive entries in feature `{0}`")]
    EmptyFeature(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid quantile {0}: must be positive")]
    InvalidQuantile(f64),

    #[error("singular covariance: {0}")]
    SingularCovariance(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid bounds: {0}")]
    Bounds(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid parameter `{name}`: {reason}")]
    Param { name: String, reason: String },

    #[error("n_neighbors = {k} must be smaller than the number of rows ({n})")]
    NeighborCount { k: usize, n: usize },

    #[error("mixture component {0} is singular after regularization")]
    SingularComponent(usize),

    #[error("cell `{0}` has no positive labels")]
    NoPositiveLabel(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("insufficient inliers: {0} predicted, at least 3 required")]
    InsufficientInliers(usize),

    #[error("empty evaluation: no cycles to score")]
    EmptyEvaluation,

    #[error("anomaly spec error: {0}")]
    Spec(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Param {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Json { .. } => true,
            Error::Csv { source, .. } => source.is_io_error(),
            _ => false,
        }
    }
}
