use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dissipated power {power:.6} W on resistor R{resistor} exceeds the limit of {limit} W")]
    PowerLimitExceeded {
        resistor: usize,
        power: f64,
        limit: f64,
    },

    #[error("all updated particle weights vanished (max {max_weight:e}); outcome {outcome} is inconsistent with the posterior")]
    ZeroEvidence { outcome: usize, max_weight: f64 },

    #[error("outcome index {0} is out of range (expected 0, 1 or 2)")]
    InvalidOutcome(usize),

    #[error("convergence fit failed: {0}")]
    FitFailed(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot read `{path}`: {source}")]
    ReadConfig {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("I/O error on `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Configuration problems map to exit code 1, everything else to 2.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::ReadConfig { .. })
    }
}
