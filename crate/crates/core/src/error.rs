use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{quantity} = {value} is outside the valid range [{min}, {max}]")]
    Domain {
        quantity: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("saturation formula breaks down: total pressure {p_total} Pa does not exceed e_s = {e_s} Pa")]
    SaturationBreakdown { p_total: f64, e_s: f64 },

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("integration failed at t = {t}: {message}")]
    Integration { t: f64, message: String },

    #[error("solver failure at level {level}: {message}")]
    Solver { level: usize, message: String },

    #[error("active-set iteration did not converge after {iterations} iterations ({oscillating} faces still flipping)")]
    NonConvergence { iterations: usize, oscillating: usize },

    #[error("step size rejected: {quantity} = {value:.4} exceeds limit {limit}")]
    StepSize {
        quantity: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("frame format error: {0}")]
    Format(String),

    #[error("unsupported frame version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by invalid user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Parse { .. })
    }
}
