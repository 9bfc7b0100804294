use thiserror::Error;

use crate::scheme::FeasibilityReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed quantum numbers or other out-of-domain arguments.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no EIT window: {0}")]
    Infeasible(FeasibilityReport),

    #[error("numerical instability at t = {time:.3e} s: {reason}")]
    Instability { time: f64, reason: String },

    #[error("polariton basis undefined: control field and coupling both vanish")]
    UndefinedBasis,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Instability { .. } => 3,
            Error::Io(_) => 1,
            _ => 2,
        }
    }
}
