use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("activator field has a negative or non-finite entry {value} at node {index}")]
    NegativeField { index: usize, value: f64 },

    #[error("field has {got} nodes but the grid has {expected}")]
    FieldSize { expected: usize, got: usize },

    #[error("inhibitor concentration must be positive, got {0}")]
    NonPositiveGamma(f64),

    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("step produced a non-positive inhibitor value {gamma} (dt = {dt})")]
    Positivity { gamma: f64, dt: f64 },

    #[error("activator sup-norm {sup} exceeded the blow-up threshold {threshold}")]
    BlowUp { sup: f64, threshold: f64 },

    #[error("Picard iteration failed to contract: distances {distances:?}")]
    NonContraction { distances: Vec<f64> },

    #[error("Picard iteration did not reach tolerance within {iterations} iterations (last distance {last})")]
    NotConverged { iterations: usize, last: f64 },

    #[error("the transform integrator requires tau = eta = 1 (got tau = {tau}, eta = {eta})")]
    NormalizationRequired { tau: f64, eta: f64 },

    #[error("trajectory {index} failed at t = {time}: {source}")]
    Trajectory {
        index: u64,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
