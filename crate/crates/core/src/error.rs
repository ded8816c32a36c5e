use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the decomposition pipeline.
#[derive(Debug, Error)]
pub enum LrdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("degenerate warp: image {index} maps entirely outside the frame")]
    DegenerateWarp { index: usize },

    #[error("invalid transform update for image {index}: {reason}")]
    InvalidUpdate { index: usize, reason: String },

    #[error("manifold is disconnected: sample {index} reaches only {reachable} of {needed} required neighbors")]
    DisconnectedManifold {
        index: usize,
        reachable: usize,
        needed: usize,
    },

    #[error("solver diverged at iteration {iteration}: non-finite iterate")]
    Divergence { iteration: usize },

    #[error("ill-conditioned Jacobian for image {index} (condition {condition:e})")]
    IllConditionedJacobian { index: usize, condition: f64 },

    #[error("degenerate synthesis: {0}")]
    DegenerateSynthesis(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, LrdError>;

impl LrdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LrdError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        LrdError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl LrdError {
    /// Name of the pipeline stage that raises this kind of error.
    pub fn module(&self) -> &'static str {
        match self {
            LrdError::InvalidArgument(_) | LrdError::ShapeMismatch { .. } => "input",
            LrdError::Numeric(_) => "ops",
            LrdError::DegenerateWarp { .. } | LrdError::InvalidUpdate { .. } => "geometry",
            LrdError::DisconnectedManifold { .. } => "manifold",
            LrdError::Divergence { .. } | LrdError::IllConditionedJacobian { .. } => "solver",
            LrdError::DegenerateSynthesis(_)
            | LrdError::Format { .. }
            | LrdError::Io { .. }
            | LrdError::Image { .. } => "data",
        }
    }
}
