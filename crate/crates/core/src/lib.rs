//! Threshold sampling of CTMC information sources for minimum average age of
//! incorrect information (AoII) under a sampling-rate budget.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
mod linalg;
pub mod markov;
pub mod model;
pub mod phasetype;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use markov::{GeneratorMatrix, StateRemoval};
pub use model::{sync_chain, CycleModel, SyncChain, ThresholdPolicy};
pub use phasetype::{embedded_dtmc, mat_exp, AbsorbingChain, ExpPropagator, PhaseType};
pub use sim::{replay, simulate, SamplingPolicy, SimConfig, SimResult};
pub use solver::{lagrange_bisection, policy_iteration, PolicySolution, SolveStatus, SolverConfig};
