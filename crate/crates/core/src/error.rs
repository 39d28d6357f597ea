use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// A formula evaluated at a pole.
    #[error("singularity: {0}")]
    Singular(String),

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// The circuit integration produced a non-finite value.
    #[error("simulation fault at t = {time_s:e} s: {reason}")]
    Fault { time_s: f64, reason: String },

    #[error("threshold calibration failed: {0}")]
    Calibration(String),

    #[error("parameter fingerprint mismatch: database {database}, session {session}")]
    FingerprintMismatch { database: String, session: String },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
