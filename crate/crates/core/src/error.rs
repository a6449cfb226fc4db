use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {axis}: expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("{op}: backward called without saved forward context")]
    MissingContext { op: &'static str },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid action instance: {0}")]
    InvalidInstance(String),

    #[error("could not pack {instances} non-overlapping instances into {length} frames after {attempts} attempts")]
    InfeasiblePacking {
        instances: usize,
        length: usize,
        attempts: usize,
    },

    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(
        "non-finite loss at epoch {epoch}, step {step} (cls={cls}, loc={loc}, ctr={ctr}, grad_norm={grad_norm})"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        cls: f64,
        loc: f64,
        ctr: f64,
        grad_norm: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::MissingContext { .. } => "missing_context",
            Error::NonFinite { .. } => "non_finite",
            Error::Config(_) => "config",
            Error::InvalidInstance(_) => "invalid_instance",
            Error::InfeasiblePacking { .. } => "infeasible_packing",
            Error::Parse { .. } => "parse",
            Error::Format { .. } => "format",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}
