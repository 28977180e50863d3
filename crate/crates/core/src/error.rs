use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("embedding file: {0}")]
    Embedding(String),

    #[error("non-finite value at frame {frame}, dim {dim}")]
    NonFiniteEmbedding { frame: usize, dim: usize },

    #[error("waveform: {0}")]
    Waveform(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("naive sLSTM step overflowed at unit {unit}; use the stabilized step")]
    Overflow { unit: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("non-finite gradient in block `{0}`")]
    NonFiniteGradient(String),

    #[error("training: {0}")]
    Training(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, labels, config) as
    /// opposed to failures while running an otherwise valid job.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::Overflow { .. }
                | Error::NonFiniteGradient(_)
                | Error::Training(_)
        )
    }
}
