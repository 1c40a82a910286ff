//! Crate-wide error type.
//!
//! Programmer-contract violations (mismatched tensor shapes fed to tape
//! primitives) panic with messages naming both shapes; everything that can
//! fail because of data or numerics at runtime — singular solves, divergent
//! rollouts, malformed files — is a structured [`Error`].

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A dense linear solve hit a pivot at or below the singularity threshold.
    #[error("singular matrix: pivot magnitude {pivot:.3e} at elimination column {index}")]
    SingularMatrix { index: usize, pivot: f64 },

    /// A matrix expected to have all eigenvalues in the open left half-plane
    /// does not (detected through its Lyapunov solution).
    #[error("matrix is not Hurwitz: {reason}")]
    NotHurwitz { reason: String },

    /// Numerical integration produced a non-finite state component.
    #[error("integration diverged: non-finite state at step {step} (t = {time:.6})")]
    Diverged { step: usize, time: f64 },

    /// Training produced a non-finite loss.
    #[error("training aborted: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// A text input (CSV row, vector literal, hex float) failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Checkpoint file is malformed, has the wrong version, or does not match
    /// the model structure it claims to describe.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Inconsistent or out-of-range configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A trajectory, dataset, or model was given data of the wrong dimension.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// The variational flow showed no decay by the configured horizon, so the
    /// converse-metric integral cannot be truncated with confidence.
    #[error(
        "possibly non-contracting: variational flow norm {norm:.6e} at t_max = {t_max} \
         exceeds the tail tolerance"
    )]
    NoDecay { t_max: f64, norm: f64 },

    /// A verification check failed (used by the CLI to exit with code 3).
    #[error("verification failed: {0}")]
    VerificationFailed(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
