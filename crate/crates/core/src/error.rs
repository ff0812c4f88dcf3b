use thiserror::Error;

use crate::catalog::CloudConfiguration;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed line in one of the CSV / key=value inputs.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("configuration {config:?} lies outside the {vms}x{sizes} grid")]
    OutOfBounds {
        config: CloudConfiguration,
        vms: usize,
        sizes: usize,
    },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("{mode} observations are unavailable for {what}")]
    ModeUnavailable { mode: &'static str, what: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no unobserved feasible candidate remains in the search space")]
    Exhausted,

    #[error("search found no feasible configuration after spending {accumulated_charge_usd} USD")]
    NoSolution { accumulated_charge_usd: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }
}
