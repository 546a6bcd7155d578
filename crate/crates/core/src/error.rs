use thiserror::Error;

/// Errors raised by the geometric kernels, integrators and experiment runner.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("pinching bound violated at t = {t}: value {value} outside [{lo}, {hi}]")]
    PinchingViolation { t: f64, value: f64, lo: f64, hi: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("step budget of {max_steps} exhausted at t = {t}")]
    TooManySteps { t: f64, max_steps: usize },

    #[error("Riccati blow-up near t = {t_estimate} (smallest eigenvalue {eigenvalue:e})")]
    BlowUp { t_estimate: f64, eigenvalue: f64 },

    #[error("singular operator: {0}")]
    Singular(String),

    #[error("no convergence: {what} (certificate {certificate:e} > {tolerance:e})")]
    NonConvergence {
        what: String,
        certificate: f64,
        tolerance: f64,
    },

    #[error("shooting failed: {0}")]
    Shooting(String),

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by user input (configuration, parse, arguments)
    /// rather than by a numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::PinchingViolation { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
