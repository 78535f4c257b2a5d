//! Safe reinforcement learning with stochastic MPC-based policies.

pub mod critic;
pub mod env_sim;
pub mod error;
pub mod experiment;
pub mod ip_solver;
pub mod learner;
pub mod linalg;
pub mod policy;
pub mod robust_mpc;
pub mod sensitivities;
pub mod toy;

pub use error::{Error, Result};
