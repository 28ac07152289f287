use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every layer of the crate, from the numerical kernels up to
/// the command-line harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("KL divergence undefined: v[{index}] = 0 but u[{index}] = {u_val} > 0")]
    DivergenceUndefined { index: usize, u_val: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("non-finite loss component `{component}` at iteration {iteration}: {value}")]
    NonFinite {
        component: &'static str,
        iteration: u64,
        value: f64,
    },

    #[error("integrity error in {path}: {reason} (byte offset {offset})")]
    Integrity {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("unsupported version {found} in {path} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("check failed: {0}")]
    CheckFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Integrity { .. } | Error::Version { .. } => 3,
            _ => 1,
        }
    }
}
