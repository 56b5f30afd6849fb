//! Progress-constrained reinforcement learning for behavior-tree controllers.
//!
//! A behavior tree partitions the state space into operating regions, one per
//! behavior leaf. Ordering the leaves by intended progression yields nested
//! convergence sets; each learned controller is kept inside its set by an
//! action mask derived from a reach-avoid feasibility estimator.

pub mod bt;
pub mod cli;
pub mod config;
pub mod envs;
pub mod eval;
pub mod exec;
pub mod feasibility;
pub mod io;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod rl;
