use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// State captured when training produces a non-finite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSnapshot {
    pub batch_index: usize,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    /// Largest absolute finite parameter value at the moment of failure.
    pub max_abs_param: f64,
    pub non_finite_params: usize,
}

impl std::fmt::Display for DivergenceSnapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "batch {} epoch {} step {}: loss={} max|θ|={} non-finite params={}",
            self.batch_index, self.epoch, self.step, self.loss, self.max_abs_param, self.non_finite_params
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("overshoot guard: η·λ·max(F̂) = {product} > 1 (η={eta}, λ={lambda}, max F̂={max_importance})")]
    Overshoot {
        eta: f64,
        lambda: f64,
        max_importance: f64,
        product: f64,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at {0}")]
    Divergence(Box<DivergenceSnapshot>),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("{path}: format error at byte offset {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{path}: parse error at row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
