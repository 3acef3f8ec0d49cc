use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numerical failure in {context}: residual {residual:e}")]
    NumericalFailure { context: &'static str, residual: f64 },

    #[error("unsupported orbit: {0}")]
    UnsupportedOrbit(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("infeasible mass: {mass:.6} kg would fall below dry mass {m_dry:.6} kg")]
    InfeasibleMass { mass: f64, m_dry: f64 },

    #[error("no Lambert solution over the time-of-flight grid")]
    NoSolution,

    #[error("scenario sampling failed after {0} attempts")]
    SamplingFailure(usize),

    #[error("body {0} not found in catalog")]
    CatalogMiss(i64),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("experiment error: {0}")]
    Experiment(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::NumericalFailure { .. }
            | Error::UnsupportedOrbit(_)
            | Error::DegenerateGeometry(_)
            | Error::InfeasibleMass { .. }
            | Error::NoSolution
            | Error::SamplingFailure(_) => ErrorKind::Numerical,
            Error::CatalogMiss(_)
            | Error::Shape { .. }
            | Error::Input(_)
            | Error::Experiment(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => ErrorKind::Data,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }
}
