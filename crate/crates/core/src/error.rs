use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum MeschError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("integration produced a non-finite state at t = {t:.4} s")]
    Integration { t: f64 },

    #[error("infeasible trajectory: terminal miss {residual:.3e} m exceeds {tolerance:.1e} m")]
    Infeasible { residual: f64, tolerance: f64 },

    #[error("scenario load error in field `{field}`: {reason}")]
    Load { field: String, reason: String },

    #[error("runtime monitor violation at t = {t:.2} s: {what}")]
    Monitor { t: f64, what: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, MeschError>;

impl MeschError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MeschError::Io {
            path: path.into(),
            source,
        }
    }
}
