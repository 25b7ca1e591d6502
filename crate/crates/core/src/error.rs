use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite value at grid index {index}")]
    NonFinite { index: usize },

    #[error("grid mismatch: {left} points vs {right} points")]
    GridMismatch { left: usize, right: usize },

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid field recipe `{recipe}`: {reason}")]
    Recipe { recipe: String, reason: String },

    #[error("eigensystem: {0}")]
    Eigen(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("negative consumption {value} at t = {time}")]
    NegativeControl { time: f64, value: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("empty sample")]
    EmptySample,

    /// `line` is 0 for command-line overrides.
    #[error("config{}: {message}", if *line > 0 { format!(" line {line}") } else { String::new() })]
    Config { line: usize, message: String },
}
