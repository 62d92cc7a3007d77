//! Distributed robust PCA by consensus factorization (DCF-PCA).
//!
//! An observed matrix `M = L + S` is split column-wise across clients. Each
//! client keeps its block private, solves a small convex problem for its
//! right factor and sparse part, and takes gradient steps on a shared left
//! factor `U`; a server averages the clients' copies of `U` once per round.
//! The crate bundles the per-client solver, the round-synchronous driver,
//! synthetic problem generation, and evaluation utilities.

pub mod error;
pub mod eval;
pub mod matrix;
pub mod problem;
pub mod rng;
pub mod runtime;
pub mod solver;

pub use error::{Error, Result};
pub use matrix::{nuclear_norm_small, singular_values_lowrank, DenseMatrix};
pub use problem::{Partition, RpcaProblem};
pub use rng::SplitMix64;
pub use runtime::{EtaSchedule, Hyperparams, RunOutput, RunTrace, ServerState};
pub use solver::{ClientState, InnerSolveConfig};
