use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("length mismatch: {what} has {got} samples, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("characteristics are not strictly increasing at node {index}")]
    NonMonotone { index: usize },

    #[error("jacobian floor breached: min dy = {min_dy:e} below floor {floor:e} at t = {t}")]
    JacobianFloor { t: f64, min_dy: f64, floor: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("initial map y0 is not increasing: dy0 = {value:e} at node {index}")]
    NotIncreasing { index: usize, value: f64 },

    #[error("position {x} lies outside the characteristic image [{lo}, {hi}]")]
    OutsideImage { x: f64, lo: f64, hi: f64 },

    #[error("picard iteration did not reach {tol:e} within {iterations} iterations (last ratio {last_ratio})")]
    PicardNotConverged {
        iterations: usize,
        tol: f64,
        last_ratio: f64,
    },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error(
        "oracle under-resolved: step-halving disagreement {disagreement:e} exceeds {threshold:e}"
    )]
    UnderResolved { disagreement: f64, threshold: f64 },

    #[error("time {t} is not available: {reason}")]
    TimeUnavailable { t: f64, reason: String },

    #[error("run terminated early at t = {t}: {reason}")]
    EarlyTermination { t: f64, reason: String },

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
