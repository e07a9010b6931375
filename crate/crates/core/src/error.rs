use std::path::PathBuf;

use thiserror::Error;

use crate::gas::GasState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Both detector ports (or s0) are zero, so a normalized strength does not exist.
    #[error("polarization undefined: zero total intensity")]
    UndefinedPolarization,

    #[error("invalid pump: {0}")]
    InvalidPump(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("step size underflow at t = {t:e} s (h = {h:e} s)")]
    Stiffness { t: f64, h: f64, state: Box<GasState> },

    #[error("no steady state after {t:e} s (relative RHS norm {residual:e})")]
    NonConvergence { t: f64, residual: f64, state: Box<GasState> },

    #[error("threshold criterion never met between {low:e} W and {high:e} W")]
    NoThreshold { low: f64, high: f64 },

    #[error("level {level} at {wavelength_nm:.3} nm falls outside every spectral bin")]
    Binning { level: usize, wavelength_nm: f64 },

    #[error("calibration degenerate: port {port} received zero counts")]
    CalibrationDegenerate { port: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("failed to parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
