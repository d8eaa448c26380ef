use thiserror::Error;

/// Errors raised by the numerical modules and the experiment runner.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("grid mismatch: expected {expected} points, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("no critical point: a and b must both be positive")]
    NoCriticalPoint,

    #[error("no coexistence at T = {t} (critical temperature {tc})")]
    NoCoexistence { t: f64, tc: f64 },

    #[error("function is not double-welled on the sampled interval")]
    NoDoubleWell,

    #[error("no interface: kT = {kt} is not below the well's critical temperature {kt_c}")]
    NoInterface { kt: f64, kt_c: f64 },

    #[error("first moment of the {0} kernel diverges on the line")]
    UnboundedMoment(&'static str),

    #[error("not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("interface cost failed at kT = {kt}: {source}")]
    ExponentPoint { kt: f64, source: Box<Error> },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
