use std::path::PathBuf;

use thiserror::Error;

use crate::wire::ProtocolError;

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] neurochair_core::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Protocol(#[from] ProtocolError),

    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("replay aborted at line {line}: {reason}")]
    Replay { line: usize, reason: String },

    #[error("pipeline failure: {0}")]
    Pipeline(String),
}

impl ServiceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error comes from bad input (config, data, model shape)
    /// rather than from the environment at run time.
    pub fn is_validation(&self) -> bool {
        use neurochair_core::Error as E;
        match self {
            ServiceError::Config(_) => true,
            ServiceError::Core(e) => matches!(
                e,
                E::Validation(_) | E::Parse { .. } | E::Underdetermined(_) | E::DimensionMismatch { .. }
            ),
            _ => false,
        }
    }
}
