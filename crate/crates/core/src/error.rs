use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("duplicate series label `{0}`")]
    DuplicateLabel(String),

    #[error("need at least {required} series, only {actual} survived")]
    TooFewSeries { required: usize, actual: usize },

    #[error("need at least {required} observations, got {actual}")]
    TooFewObservations { required: usize, actual: usize },

    #[error("series `{label}` has a nonpositive price {value} at column {column}")]
    NonPositivePrice {
        label: String,
        column: usize,
        value: f64,
    },

    #[error("series `{0}` has no sector assignment")]
    MissingSector(String),

    #[error("period {start}..={end} does not intersect the panel's dates")]
    EmptyPeriod { start: String, end: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("spectral grid needs {bytes} bytes, over the {limit} byte limit")]
    MemoryLimit { bytes: usize, limit: usize },

    #[error("matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("unstable VAR: companion spectral radius {0:.6} >= 1")]
    Unstable(f64),

    #[error("row {0} of the moving-average filter is identically zero")]
    ZeroRow(usize),

    #[error("factor rotation K must be supplied when q = {0} > 1")]
    MissingRotation(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Broad class of the failure, used by the CLI to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Format { .. }
            | Error::DuplicateLabel(_)
            | Error::TooFewSeries { .. }
            | Error::TooFewObservations { .. }
            | Error::NonPositivePrice { .. }
            | Error::MissingSector(_)
            | Error::EmptyPeriod { .. } => ErrorKind::Data,
            Error::InvalidParameter(_) | Error::MissingRotation(_) | Error::MemoryLimit { .. } => {
                ErrorKind::Config
            }
            Error::DimensionMismatch { .. }
            | Error::NotHermitian(_)
            | Error::Singular(_)
            | Error::Unstable(_)
            | Error::ZeroRow(_)
            | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Stage { source, .. } => source.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
