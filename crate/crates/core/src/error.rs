use thiserror::Error;

/// Errors raised by the design library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The closed-form conditions only cover nonpositive effects.
    #[error("effect beta_{feature} = {value} is positive; closed-form conditions require beta_k <= 0")]
    PositiveEffect { feature: usize, value: f64 },

    #[error("information matrix is singular (condition estimate {condition:e})")]
    SingularInformation { condition: f64 },

    #[error("K = {0} exceeds the enumeration limit of {max}", max = crate::MAX_ENUM_K)]
    TooManyFeatures(usize),

    #[error("maximum likelihood fit did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, DesignError>;
