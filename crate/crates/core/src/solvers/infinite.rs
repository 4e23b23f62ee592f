use super::finite::solve_coupled;
use super::{
    solve_discounted_stationary, solve_finite_horizon, DiscountedSolution, ErgodicSolution,
    SolverConfig,
};
use crate::error::{Error, Result};
use crate::grid::{gradient, Field};
use crate::kernels::{BackwardTerms, PathField, TimeGrid};
use crate::lab::fit::{fit_exponential, ExpFit, FitModel};
use crate::lab::turnpike::{decay_floor, turnpike_report};
use crate::problem::MfgProblem;

/// Truncation error target `exp(-w T) <= TRUNCATION_TARGET`.
const TRUNCATION_TARGET: f64 = 1e-8;
const MIN_TRUNCATION_STEPS: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct InfiniteHorizonSolution {
    pub v_path: PathField,
    pub mu_path: PathField,
    /// `int v(t)` per frame.
    pub averages: Vec<f64>,
    /// Mean of `int v` over the last 10% of frames.
    pub c_bar: f64,
    /// `|a(0.9 T) - a(T)|`.
    pub tail_drift: f64,
    pub tail_flat: bool,
    pub iterations: usize,
    pub residual: f64,
}

impl InfiniteHorizonSolution {
    /// The solution of the same system whose average tends to `c` instead of `c_bar`.
    pub fn normalized(&self, c: f64) -> PathField {
        let shift = c - self.c_bar;
        let frames = self
            .v_path
            .frames()
            .iter()
            .map(|f| f.add_constant(shift))
            .collect();
        PathField::new(*self.v_path.time_grid(), frames).expect("same shape")
    }

    pub fn horizon(&self) -> f64 {
        self.v_path.time_grid().horizon()
    }
}

#[derive(Debug, Clone)]
pub struct DiscountedEvolution {
    pub stationary: DiscountedSolution,
    pub u_path: PathField,
    pub m_path: PathField,
    pub times: Vec<f64>,
    /// `|m(t) - m_delta|_sup + |Du(t) - Du_delta|_sup`.
    pub decay_profile: Vec<f64>,
    pub fit: Option<ExpFit>,
    pub iterations: usize,
}

fn truncation_for(rate: f64, dt: f64) -> f64 {
    (-TRUNCATION_TARGET.ln() / rate).max(MIN_TRUNCATION_STEPS * dt)
}

/// Turnpike rate of a probe solve on `[0, 10/kappa]`; `None` when the probe
/// is already stationary.
pub fn estimate_decay_rate(
    problem: &MfgProblem,
    erg: &ErgodicSolution,
    cfg: &SolverConfig,
) -> Result<Option<f64>> {
    let horizon = 10.0 / problem.kappa();
    let sol = solve_finite_horizon(problem, horizon, cfg)?;
    let report = turnpike_report(&sol, erg, None)?;
    Ok(report.fit.map(|f| f.rate).filter(|w| *w > 0.0))
}

fn default_truncation(
    problem: &MfgProblem,
    erg: &ErgodicSolution,
    cfg: &SolverConfig,
) -> Result<f64> {
    Ok(match estimate_decay_rate(problem, erg, cfg)? {
        Some(w) => truncation_for(w, cfg.dt),
        None => MIN_TRUNCATION_STEPS * cfg.dt,
    })
}

/// `-v_t + lambda - kappa Lap v + H = F(mu)`, `mu(0) = m0`, on `[0, T_trunc]`
/// with `v(T_trunc) = u_bar`.
pub fn solve_infinite_horizon(
    problem: &MfgProblem,
    t_trunc: Option<f64>,
    erg: &ErgodicSolution,
    cfg: &SolverConfig,
) -> Result<InfiniteHorizonSolution> {
    if erg.u.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    let horizon = match t_trunc {
        Some(t) => t,
        None => default_truncation(problem, erg, cfg)?,
    };
    let tg = TimeGrid::with_step(horizon, cfg.dt)?;
    let terms = BackwardTerms {
        shift: erg.lambda,
        scheme: cfg.scheme,
        ..Default::default()
    };
    let init = PathField::constant(tg, problem.m0());
    let sol = solve_coupled(problem, &init, &erg.u, terms, cfg)?;
    let averages: Vec<f64> = sol.u_path.frames().iter().map(Field::integrate).collect();
    let steps = tg.steps();
    let start = ((0.9 * steps as f64).floor() as usize).min(steps);
    let tail = &averages[start..];
    let c_bar = tail.iter().sum::<f64>() / tail.len() as f64;
    let tail_drift = (averages[start] - averages[steps]).abs();
    Ok(InfiniteHorizonSolution {
        v_path: sol.u_path,
        mu_path: sol.m_path,
        averages,
        c_bar,
        tail_drift,
        tail_flat: tail_drift <= 10.0 * cfg.tol,
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

/// `-u_t + delta u - kappa Lap u + H = F(m)` on `[0, T_trunc]` with
/// `u(T_trunc) = u_delta`, together with the decay of the distance to the
/// discounted stationary pair.
pub fn solve_discounted_evolution(
    problem: &MfgProblem,
    delta: f64,
    t_trunc: f64,
    cfg: &SolverConfig,
) -> Result<DiscountedEvolution> {
    let stationary = solve_discounted_stationary(problem, delta, cfg)?;
    let tg = TimeGrid::with_step(t_trunc, cfg.dt)?;
    let terms = BackwardTerms {
        discount: delta,
        scheme: cfg.scheme,
        ..Default::default()
    };
    let init = PathField::constant(tg, problem.m0());
    let sol = solve_coupled(problem, &init, &stationary.u, terms, cfg)?;
    let du_bar = gradient(&stationary.u);
    let decay_profile: Vec<f64> = sol
        .m_path
        .frames()
        .iter()
        .zip(sol.u_path.frames())
        .map(|(m, u)| {
            let dm = m.distance_sup(&stationary.m).unwrap_or(f64::INFINITY);
            let du = gradient(u)
                .sub(&du_bar)
                .map(|v| v.sup_magnitude())
                .unwrap_or(f64::INFINITY);
            dm + du
        })
        .collect();
    let times = tg.times();
    let floor = decay_floor(&decay_profile);
    let half = tg.steps() / 2;
    let (t_fit, d_fit): (Vec<f64>, Vec<f64>) = times[..=half]
        .iter()
        .zip(&decay_profile[..=half])
        .take_while(|(_, d)| **d > floor)
        .map(|(t, d)| (*t, *d))
        .unzip();
    let fit = fit_exponential(&t_fit, &d_fit, FitModel::OneSided).ok();
    Ok(DiscountedEvolution {
        stationary,
        u_path: sol.u_path,
        m_path: sol.m_path,
        times,
        decay_profile,
        fit,
        iterations: sol.iterations,
    })
}
