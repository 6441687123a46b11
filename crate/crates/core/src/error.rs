use thiserror::Error;

/// Failures reported by the numerical routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{what} did not converge in {iterations} iterations (last residual {last:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
    #[error("linear solve is ill-conditioned (condition estimate {condition:e})")]
    IllConditioned { condition: f64 },
    #[error("eigensolver failure: {0}")]
    Eigen(String),
    #[error("field is outside the modulation tube: distance {distance:e} exceeds {delta:e}")]
    OutsideTube { distance: f64, delta: f64 },
    #[error("Newton iteration stagnated (last residual {last:e})")]
    NewtonStagnation { last: f64, history: Vec<f64> },
    #[error("blow-up suspected at t = {t} (gradient norm {grad_norm:e})")]
    BlowupSuspected { t: f64, grad_norm: f64 },
    #[error("time step underflow at t = {t} (dt = {dt:e})")]
    StepUnderflow { t: f64, dt: f64 },
    #[error("rescaled time is not monotone along the window")]
    NonMonotoneTime,
    #[error("fit window too short: {0}")]
    InsufficientWindow(String),
    #[error("parameter constraint violated: {0}")]
    Constraint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
