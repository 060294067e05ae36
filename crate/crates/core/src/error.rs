use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GfError {
    #[error("invalid coefficient ({hypothesis}): {message}")]
    InvalidCoefficient {
        hypothesis: &'static str,
        message: String,
    },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("blow-up at t = {time}: norm {norm:e} exceeds 1e12")]
    BlowUp { time: f64, norm: f64 },

    #[error("non-positive data at index {index}: {value}")]
    NonPositiveData { index: usize, value: f64 },

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("tail overflow at t = {time}: cumulative loss {loss:e} exceeds {limit:e} of the bracket")]
    TailOverflow { time: f64, loss: f64, limit: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl GfError {
    pub(crate) fn invalid(hypothesis: &'static str, message: impl Into<String>) -> Self {
        GfError::InvalidCoefficient {
            hypothesis,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for GfError {
    fn from(e: std::io::Error) -> Self {
        GfError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GfError>;
