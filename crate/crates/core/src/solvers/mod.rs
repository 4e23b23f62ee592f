//! Coupled solvers: finite horizon, ergodic, discounted, the linearized
//! theta system, truncated infinite horizon and discounted evolution.

mod finite;
mod infinite;
mod stationary;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::TimeScheme;

pub use finite::{
    finite_horizon_residuals, picard_sweep, solve_finite_horizon, solve_finite_horizon_from,
    FiniteHorizonSolution, PathResiduals,
};
pub use infinite::{
    estimate_decay_rate, solve_discounted_evolution, solve_infinite_horizon, DiscountedEvolution,
    InfiniteHorizonSolution,
};
pub use stationary::{
    cross_validate_ergodic, solve_discounted_stationary, solve_ergodic, solve_theta,
    DiscountedSolution, ErgodicMethod, ErgodicSolution, ThetaSolution,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Picard relaxation weight in `(0, 1]`.
    pub damping: f64,
    /// Fixed-point tolerance on `sup_t |m_new - m_old|`.
    pub tol: f64,
    pub max_iters: usize,
    pub scheme: TimeScheme,
    /// Halve the damping whenever the residual grows.
    pub adaptive_damping: bool,
    /// Use weights `1/(k+1)` instead of the fixed damping.
    pub fictitious_play: bool,
    /// Time step; the step count follows from the horizon.
    pub dt: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    /// Fall back to the long-time method when ergodic Newton fails.
    pub ergodic_fallback: bool,
    /// Horizon of the long-time ergodic method, in units of `1/kappa`.
    pub longtime_horizon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            damping: 0.5,
            tol: 1e-10,
            max_iters: 2000,
            scheme: TimeScheme::Implicit,
            adaptive_damping: true,
            fictitious_play: false,
            dt: 0.01,
            newton_tol: 1e-12,
            newton_max_iters: 60,
            ergodic_fallback: true,
            longtime_horizon: 40.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("solver.{field}"), msg));
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(
                "damping",
                format!("must lie in (0, 1], got {}", self.damping),
            );
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return bad("tol", format!("must be positive, got {}", self.tol));
        }
        if self.max_iters == 0 {
            return bad("max_iters", "must be at least 1".into());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.newton_tol > 0.0) {
            return bad(
                "newton_tol",
                format!("must be positive, got {}", self.newton_tol),
            );
        }
        if self.newton_max_iters == 0 {
            return bad("newton_max_iters", "must be at least 1".into());
        }
        if !(self.longtime_horizon > 0.0) {
            return bad(
                "longtime_horizon",
                format!("must be positive, got {}", self.longtime_horizon),
            );
        }
        Ok(())
    }
}
