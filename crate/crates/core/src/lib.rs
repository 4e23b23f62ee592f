//! Finite-difference laboratory for mean field game systems on the flat torus.
//!
//! The crate discretizes the coupled Hamilton-Jacobi-Bellman and
//! Fokker-Planck equations with a monotone upwind scheme whose transport
//! operator is the exact transpose of the linearized HJB transport, and
//! provides solvers for the finite-horizon, ergodic, discounted,
//! linearized and infinite-horizon systems together with the experiment
//! drivers that measure their long-time behavior.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod lab;
pub mod linalg;
pub mod model;
pub mod problem;
pub mod solvers;
pub mod upwind;

pub use error::{Error, Result};
pub use grid::{build_grid, Field, Grid, NormKind, VectorField};
pub use kernels::{PathField, TimeGrid, TimeScheme};
pub use model::{CouplingSpec, Expr, HamiltonianFamily, HamiltonianSpec, Term, TerminalSpec};
pub use problem::MfgProblem;
pub use solvers::SolverConfig;
