//! Sequential decision making at desk scale: exact dynamic programming on
//! tabular MDPs, linear-quadratic control and estimation, receding-horizon
//! control, multi-armed bandits, derivative-free policy search, and a seeded
//! experiment harness that makes every run replicable.

pub mod bandits;
pub mod error;
pub mod harness;
pub mod learning;
pub mod linear;
pub mod mdp;
pub mod mpc;
pub mod repro;
pub mod search;

pub use error::CoreError;

/// Crate result alias used across all modules.
pub type Result<T> = std::result::Result<T, CoreError>;
