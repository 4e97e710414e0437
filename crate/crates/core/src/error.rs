use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("simulation diverged: {0}")]
    SimulationDiverged(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite probability ratio at sample {index}")]
    NonFiniteRatio { index: usize },

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(f64),

    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("schema mismatch in {path}: missing columns {missing:?}")]
    SchemaMismatch { path: PathBuf, missing: Vec<String> },

    #[error("{0}")]
    Usage(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
