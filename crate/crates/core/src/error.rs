use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the controller library, the simulator and the harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain on which an operation is defined.
    #[error("{quantity} = {value} is outside its domain {domain}")]
    Domain {
        quantity: &'static str,
        value: f64,
        domain: String,
    },

    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A non-finite value reached the controller; the motor is switched off.
    #[error("controller fault at t = {t} s: {reason}")]
    Fault { t: f64, reason: String },

    /// Actuation command outside the motor's range.
    #[error("actuation command y = {y} outside [0, {y_max}]")]
    Actuation { y: f64, y_max: f64 },

    /// A grid-based supremum/infimum could not be certified at the requested resolution.
    #[error("grid of {grid_n} points cannot certify {quantity}: gap {gap} exceeds 1% of {value}")]
    Refinement {
        quantity: &'static str,
        grid_n: usize,
        gap: f64,
        value: f64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("scenario parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("plot error: {0}")]
    Plot(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(quantity: &'static str, value: f64, domain: impl Into<String>) -> Self {
        Error::Domain {
            quantity,
            value,
            domain: domain.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
