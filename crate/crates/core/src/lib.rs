//! Implicit coordination graphs for cooperative multi-agent reinforcement
//! learning: a small autodiff core, the coordination-graph network and its
//! baselines, two grid worlds and a PPO trainer.

pub mod autodiff;
pub mod baselines;
pub mod dicg;
pub mod error;
pub mod model;
pub mod nn;
pub mod probes;
pub mod trainer;
pub mod worlds;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
