use thiserror::Error;

/// Errors raised by model construction, simulation and estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("supercritical specification: branching ratio {0} must be below 1")]
    Supercritical(f64),

    #[error("degenerate rates: {0}; perturb one rate (e.g. by 1e-9) to use the generic closed form")]
    DegenerateRates(String),

    #[error("event {index} at time {time} has zero triggering intensity under the given immigrant labels")]
    ZeroIntensity { index: usize, time: f64 },

    #[error("initial value on the parameter boundary: {0} (a zero estimate is absorbing and would remain zero)")]
    BoundaryInit(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate Markov chain: {0}")]
    DegenerateChain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
