//! Mean-field equilibrium solvers for finite-horizon, discrete-type
//! mean-field games.
//!
//! Two solvers produce the same artifacts (a [`PolicyAtlas`] plus per-stage
//! [`StageTables`]): [`exact::backward_solve`] uses the known transition
//! kernel, and [`rl::rl_backward_solve`] only samples transitions, estimating
//! Q by batched Expected Sarsa and solving each stage fixed point with
//! softmax policy gradient. [`eval`] holds the equilibrium certificates used
//! to check one against the other.

pub mod dynamics;
pub mod env;
mod error;
pub mod eval;
pub mod exact;
pub mod io;
pub mod prescription;
pub mod rl;
pub mod rng;
pub mod simplex;
pub mod tables;

pub use dynamics::propagate_mean_field;
pub use env::{malware_env, sample_transition, EnvModel, MalwareParams};
pub use error::{Error, Result};
pub use exact::{backward_solve, FixedPointConfig};
pub use prescription::{softmax_prescription, PolicyAtlas, Prescription};
pub use rl::{rl_backward_solve, QEstimator, RlConfig};
pub use simplex::{build_grid, MeanFieldState, SimplexGrid};
pub use tables::{interpolate_value, QSlice, StageTables};
