use serde::Serialize;

use super::SolverConfig;
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::kernels::{fp_forward, hjb_backward, BackwardTerms, PathField, TimeGrid, TimeScheme};
use crate::linalg::StencilOp;
use crate::problem::MfgProblem;

const MIN_DAMPING: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct FiniteHorizonSolution {
    pub u_path: PathField,
    pub m_path: PathField,
    pub iterations: usize,
    /// Last fixed-point residual `sup_t |m_hat - m|`.
    pub residual: f64,
    pub history: Vec<f64>,
    /// `sup m` over the cylinder.
    pub density_bound: f64,
    /// `sup |Du|` over the cylinder.
    pub gradient_bound: f64,
    pub terminal: Field,
    pub terms: BackwardTerms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathResiduals {
    pub hjb: f64,
    pub fp: f64,
}

impl FiniteHorizonSolution {
    pub fn time_grid(&self) -> &TimeGrid {
        self.u_path.time_grid()
    }

    pub fn horizon(&self) -> f64 {
        self.time_grid().horizon()
    }
}

/// Damped Picard iteration on `-u_t - kappa Lap u + H = F(m)`, `u(T) = u_T`,
/// coupled with the Fokker-Planck equation from `m0`.
pub fn solve_finite_horizon(
    problem: &MfgProblem,
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<FiniteHorizonSolution> {
    let tg = TimeGrid::with_step(horizon, cfg.dt)?;
    let init = PathField::constant(tg, problem.m0());
    solve_finite_horizon_from(problem, &init, cfg)
}

/// As [`solve_finite_horizon`], starting the iteration from the density path `init`.
pub fn solve_finite_horizon_from(
    problem: &MfgProblem,
    init: &PathField,
    cfg: &SolverConfig,
) -> Result<FiniteHorizonSolution> {
    let terms = BackwardTerms {
        scheme: cfg.scheme,
        ..Default::default()
    };
    solve_coupled(problem, init, problem.terminal_field(), terms, cfg)
}

pub(crate) fn solve_coupled(
    problem: &MfgProblem,
    init: &PathField,
    terminal: &Field,
    terms: BackwardTerms,
    cfg: &SolverConfig,
) -> Result<FiniteHorizonSolution> {
    cfg.validate()?;
    if init.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    let tg = *init.time_grid();
    let mut m = init.clone();
    m.frames_mut()[0] = problem.m0().clone();
    let mut damping = cfg.damping;
    let mut history = Vec::new();
    for k in 0..cfg.max_iters {
        let u = hjb_backward(problem, &m, &tg, terminal, terms)?;
        let m_hat = fp_forward(problem, &u, &tg, problem.m0(), cfg.scheme)?;
        let res = m_hat.sup_distance(&m)?;
        history.push(res);
        if res <= cfg.tol {
            return Ok(finish(
                problem,
                u,
                m_hat,
                k + 1,
                res,
                history,
                terminal,
                terms,
            ));
        }
        if cfg.adaptive_damping && k > 0 && res > history[k - 1] {
            damping = (0.5 * damping).max(MIN_DAMPING);
        }
        let w = if cfg.fictitious_play {
            1.0 / (k as f64 + 1.0)
        } else {
            damping
        };
        for (old, new) in m.frames_mut().iter_mut().zip(m_hat.frames()).skip(1) {
            for (a, b) in old.values_mut().iter_mut().zip(new.values()) {
                *a = (1.0 - w) * *a + w * b;
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_iters,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &MfgProblem,
    u_path: PathField,
    m_path: PathField,
    iterations: usize,
    residual: f64,
    history: Vec<f64>,
    terminal: &Field,
    terms: BackwardTerms,
) -> FiniteHorizonSolution {
    let density_bound = m_path
        .frames()
        .iter()
        .map(Field::max)
        .fold(f64::NEG_INFINITY, f64::max);
    let gradient_bound = u_path
        .frames()
        .iter()
        .map(|u| problem.upwind().gradient_bound(u.values()))
        .fold(0.0, f64::max);
    FiniteHorizonSolution {
        u_path,
        m_path,
        iterations,
        residual,
        history,
        density_bound,
        gradient_bound,
        terminal: terminal.clone(),
        terms,
    }
}

/// One Picard sweep from the returned density: `FP(HJB(m))`.
pub fn picard_sweep(problem: &MfgProblem, sol: &FiniteHorizonSolution) -> Result<PathField> {
    let tg = *sol.time_grid();
    let u = hjb_backward(problem, &sol.m_path, &tg, &sol.terminal, sol.terms)?;
    fp_forward(problem, &u, &tg, problem.m0(), sol.terms.scheme)
}

/// Sup-norm residuals of the discrete HJB and FP equations along the path.
pub fn finite_horizon_residuals(
    problem: &MfgProblem,
    sol: &FiniteHorizonSolution,
) -> Result<PathResiduals> {
    let tg = *sol.time_grid();
    let dt = tg.dt();
    let grid = *problem.grid();
    let n = grid.len();
    let lap = StencilOp::neg_laplacian(grid, problem.kappa());
    let ham = problem.upwind();
    let terms = sol.terms;
    let mut hjb: f64 = 0.0;
    let mut fp: f64 = 0.0;
    let mut heat = lap.clone();
    heat.add_diagonal(&vec![1.0 / dt; n]);
    if sol.u_path.last().distance_sup(&sol.terminal)? > 0.0 {
        hjb = f64::INFINITY;
    }
    for step in 0..tg.steps() {
        let un = sol.u_path.frame(step).values();
        let un1 = sol.u_path.frame(step + 1).values();
        let mn = sol.m_path.frame(step).values();
        let mn1 = sol.m_path.frame(step + 1).values();
        let f = problem.coupling_values(mn1);
        let lu = lap.apply(un);
        let h_at = match terms.scheme {
            TimeScheme::Implicit => un,
            TimeScheme::SemiImplicit => un1,
        };
        let hv = ham.value(h_at);
        for i in 0..n {
            let r =
                (un[i] - un1[i]) / dt + terms.discount * un[i] + lu[i] + hv[i] - f[i] + terms.shift;
            hjb = hjb.max(r.abs());
        }
        match terms.scheme {
            TimeScheme::Implicit => {
                let lm = lap.apply(mn1);
                let tm = ham.fp_operator(un).apply(mn1);
                for i in 0..n {
                    fp = fp.max(((mn1[i] - mn[i]) / dt + lm[i] + tm[i]).abs());
                }
            }
            TimeScheme::SemiImplicit => {
                let rhs: Vec<f64> = mn.iter().map(|v| v / dt).collect();
                let z = heat.solve(&rhs)?;
                let tz = ham.fp_operator(un1).apply(&z);
                for i in 0..n {
                    fp = fp.max(((mn1[i] - z[i] + dt * tz[i]) / dt).abs());
                }
            }
        }
    }
    Ok(PathResiduals { hjb, fp })
}
