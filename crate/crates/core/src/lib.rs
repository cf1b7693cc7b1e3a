//! Closed-loop propofol dosing workbench.
//!
//! Simulates a virtual patient (3-compartment pharmacokinetics, effect-site
//! link, Hill pharmacodynamic response, noisy measurement), trains a small
//! policy network with the cross-entropy method to titrate infusion against
//! moving unconsciousness targets, and benchmarks the result against a PID
//! controller with the usual performance-error metrics.

pub mod agent;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod export;
pub mod manifest;
pub mod pid;
pub mod pkpd;
pub mod policy;
pub mod rollout;
pub mod schnider;
pub mod seeds;
pub mod trainer;

pub use error::{Error, Result};
