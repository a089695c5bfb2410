use thiserror::Error;

/// Errors raised by the model, solvers and oracles.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violated its domain invariant; `field` names the culprit.
    #[error("{field} {reason}")]
    InvalidParam { field: &'static str, reason: String },

    /// A control could not be constructed from the given grid and levels.
    #[error("invalid control: {0}")]
    InvalidControl(String),

    /// An operation was called outside the parameter regime it is defined for.
    #[error("regime precondition violated: {0}")]
    Regime(String),

    /// Adaptive quadrature exhausted its panel budget.
    #[error("quadrature did not converge: {panels} panels used, error estimate {estimate:e}")]
    Quadrature { panels: usize, estimate: f64 },

    /// Exhaustive enumeration would exceed the configured search budget.
    #[error("search space of {size} candidates exceeds the exhaustive limit {limit}; use the segment dynamic-programming search instead")]
    SearchSpace { size: f64, limit: usize },

    /// A candidate value surface was paired with inconsistent switching data.
    #[error("inconsistent candidate: {0}")]
    Candidate(String),

    /// Configuration file or command line could not be parsed.
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        field,
        reason: reason.into(),
    }
}
