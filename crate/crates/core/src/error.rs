use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// A caller broke an operation's precondition (mismatched shapes, bad sizes).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid degradation parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),

    #[error("parameter fit did not converge (best residual {best_residual:.3e})")]
    NonConvergence { best_residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at iteration {iteration}: {diagnostics}")]
    NonFinite { iteration: u64, diagnostics: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Torch(#[from] tch::TchError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
