use thiserror::Error;

use crate::trainer::TrainTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible: {reason} (residual {residual:e})")]
    Infeasible { reason: String, residual: f64 },

    #[error("sample {sample}: rejection sampler exceeded {max_rejects} consecutive rejections")]
    RejectionLimit { sample: usize, max_rejects: u64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step} (loss {loss:e})")]
    Diverged { step: usize, loss: f64, trace: Box<TrainTrace> },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("schema error at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Dimension { context, expected, found })
        }
    }
}
