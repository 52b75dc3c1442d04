use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape((usize, usize), (usize, usize)),

    #[error("invalid design: {0}")]
    Design(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failed: {reason} (relative residual {residual:.3e})")]
    Solver { reason: String, residual: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid action index {0} (expected 0..{1})")]
    Action(usize, usize),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("environment aborted: {0}")]
    Aborted(String),

    #[error("model is untrained")]
    Untrained,

    #[error("format error: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
