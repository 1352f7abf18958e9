//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular matrix in {context} at step {step}")]
    Singular { context: &'static str, step: usize },

    #[error("terminal constraint infeasible from state {state} within horizon {horizon}")]
    Infeasible { state: usize, horizon: usize },

    #[error("recursive infeasibility: every state-action pair is infeasible at time {time}")]
    RecursiveInfeasibility { time: usize },

    #[error("parameter vector diverged: |theta| = {norm:.3e} exceeds guard {guard:.3e}")]
    Diverged { norm: f64, guard: f64 },

    #[error("configuration error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
