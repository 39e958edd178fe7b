use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state at step {step} ({what} {index})")]
    NonFinite {
        step: usize,
        what: &'static str,
        index: usize,
    },

    #[error("index {index} out of range 0..={max}")]
    OutOfRange { index: usize, max: usize },

    #[error("resolution mismatch: {0}")]
    Resolution(String),

    #[error(
        "spatial grid unresolved: J vs 2J discrepancy {discrepancy:.3e} exceeds {tolerance:.3e}"
    )]
    GridUnresolved { discrepancy: f64, tolerance: f64 },

    #[error("adaptive run did not converge by level {max_level}")]
    NotConverged {
        max_level: usize,
        partial: Box<crate::adaptive::MlmcReport>,
    },

    #[error("control file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
