//! Forward and inverse solvers for finite-horizon linear-quadratic Gaussian
//! (LQG) games.
//!
//! The forward direction computes the feedback Nash equilibrium through
//! coupled Riccati recursions ([`forward`]). The inverse direction recovers
//! time-varying cost parameters that reproduce a given Nash policy
//! ([`identify`]), either from the exact policy or from a policy estimated
//! out of noisy demonstrations ([`simulate`], [`estimate`]).

pub mod cls;
pub mod config;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod forward;
pub mod identify;
pub mod linalg;
pub mod model;
pub mod simulate;

pub use error::{Error, Result};
pub use forward::{expected_cost, solve_nash, ExistenceReport};
pub use model::{
    validate_policy, Costs, Dynamics, GameSpec, NashPolicy, TrajectoryBatch, ValueRecursion,
};
