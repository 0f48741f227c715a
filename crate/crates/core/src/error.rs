use thiserror::Error;

/// Errors produced by the simulation, solver and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("mismatched lattice windows: {0}")]
    WindowMismatch(String),

    #[error("profiles have different tails (left {left_a} vs {left_b}, right {right_a} vs {right_b})")]
    UnequalTails {
        left_a: f64,
        left_b: f64,
        right_a: f64,
        right_b: f64,
    },

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid event stream request: {0}")]
    InvalidStream(String),

    #[error("CFL condition violated: dt/dx = {ratio} exceeds 1/(2V) = {limit}")]
    Cfl { ratio: f64, limit: f64 },

    #[error("flux function unavailable in closed form: {0}")]
    FluxUnavailable(String),

    #[error("invalid flux: {0}")]
    InvalidFlux(String),

    #[error("window fencing violated: {0}")]
    Fencing(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
