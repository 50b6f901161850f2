use thiserror::Error;

/// Errors raised by the simulation kernel and the experiment runners.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("matrix is not positive semidefinite (pivot {pivot} = {value:e})")]
    NotPsd { pivot: usize, value: f64 },

    #[error("joint channel covariance is not positive semidefinite at zeta = {zeta} (boundary {boundary:.9})")]
    CovarianceNotPsd { zeta: f64, boundary: f64 },

    #[error("matrix is numerically singular (pivot {pivot}, |pivot|/max = {ratio:e})")]
    Singular { pivot: usize, ratio: f64 },

    #[error("scaling factor infeasible: trace(M1) = {trace_m1} exceeds N^2 sigma_H^2 = {budget}")]
    AlphaInfeasible { trace_m1: f64, budget: f64 },

    #[error("no channel sample survived the guard band")]
    InsufficientEntropy,

    #[error("{quantity} = {value} is outside its domain {domain}")]
    Domain {
        quantity: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("bit-length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("sample index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("water-filling needs at least one positive gain")]
    DegenerateWaterfill,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },
}

impl Error {
    pub(crate) fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Numerical failures (as opposed to bad input) map to a distinct CLI exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::CovarianceNotPsd { .. }
                | Error::Singular { .. }
                | Error::AlphaInfeasible { .. }
                | Error::DegenerateWaterfill
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
