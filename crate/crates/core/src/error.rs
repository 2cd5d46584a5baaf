use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure surfaced by the library. The display text leads with the
/// module that raised it so CLI messages are attributable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format: {what} at byte {offset}: {msg}")]
    Format {
        what: &'static str,
        offset: u64,
        msg: String,
    },

    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("{module}: invalid config: {msg}")]
    Config { module: &'static str, msg: String },

    #[error("{module}: step {t} outside [{lo}, {hi}]")]
    StepRange {
        module: &'static str,
        t: usize,
        lo: usize,
        hi: usize,
    },

    #[error("metrics: {0}")]
    Metric(String),

    #[error("denoiser: {0}")]
    Model(String),

    #[error("train: {0}")]
    Train(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Config {
            module,
            msg: msg.into(),
        }
    }
}
