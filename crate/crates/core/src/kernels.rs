//! Time-stepping kernels for the backward HJB equation, the forward
//! Fokker-Planck equation and the linear parabolic problems of the decay
//! lemmas.
//!
//! Two schemes are provided. The implicit scheme solves
//!
//! ```text
//! (u^n - u^{n+1})/dt + delta u^n - kappa Lap u^n + H(Du^n) = F(m^{n+1}) - c
//! (m^{n+1} - m^n)/dt - kappa Lap m^{n+1} + L(u^n)^T m^{n+1} = 0
//! ```
//!
//! with a Newton iteration per HJB step. Stationary states are exact fixed
//! points and the FP step is the transpose of the linearized HJB step, so
//! mass is conserved and positivity holds for every `dt`. The
//! semi-implicit scheme treats the Hamiltonian explicitly and needs the
//! transport CFL bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{divergence, Field, Grid, NormKind, VectorField};
use crate::lab::fit::{fit_exponential, FitModel};
use crate::linalg::StencilOp;
use crate::problem::{MfgProblem, MASS_TOL};
use crate::upwind::{fp_transport, hjb_transport, split_drift};

const NEWTON_MAX_ITERS: usize = 40;
/// Tolerated negative density from roundoff.
pub const POSITIVITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument(
                "time grid needs at least one step".into(),
            ));
        }
        Ok(TimeGrid {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    /// Smallest step count whose step does not exceed `dt`.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
        Self::new(horizon, steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|n| self.time(n)).collect()
    }

    /// Explicit transport needs `dt * rate <= 1` to keep densities nonnegative.
    pub fn check_cfl(&self, transport_rate: f64) -> Result<()> {
        if self.dt * transport_rate > 1.0 {
            return Err(Error::Cfl {
                dt: self.dt,
                limit: 1.0 / transport_rate,
            });
        }
        Ok(())
    }
}

/// One field per time level, `steps + 1` frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PathField {
    time_grid: TimeGrid,
    frames: Vec<Field>,
}

impl PathField {
    pub fn new(time_grid: TimeGrid, frames: Vec<Field>) -> Result<Self> {
        if frames.len() != time_grid.steps() + 1 {
            return Err(Error::InvalidArgument(format!(
                "path has {} frames, time grid needs {}",
                frames.len(),
                time_grid.steps() + 1
            )));
        }
        let g = *frames[0].grid();
        if frames.iter().any(|f| f.grid() != &g) {
            return Err(Error::GridMismatch);
        }
        Ok(PathField { time_grid, frames })
    }

    pub fn constant(time_grid: TimeGrid, frame: &Field) -> Self {
        PathField {
            time_grid,
            frames: vec![frame.clone(); time_grid.steps() + 1],
        }
    }

    pub fn time_grid(&self) -> &TimeGrid {
        &self.time_grid
    }

    pub fn grid(&self) -> &Grid {
        self.frames[0].grid()
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn frame(&self, n: usize) -> &Field {
        &self.frames[n]
    }

    pub fn first(&self) -> &Field {
        &self.frames[0]
    }

    pub fn last(&self) -> &Field {
        &self.frames[self.frames.len() - 1]
    }

    /// Frame nearest to time `t`.
    pub fn at_time(&self, t: f64) -> &Field {
        let n = (t / self.time_grid.dt())
            .round()
            .clamp(0.0, self.time_grid.steps() as f64);
        &self.frames[n as usize]
    }

    pub fn sup_distance(&self, other: &PathField) -> Result<f64> {
        if self.frames.len() != other.frames.len() {
            return Err(Error::InvalidArgument(
                "paths have different lengths".into(),
            ));
        }
        self.frames
            .iter()
            .zip(&other.frames)
            .try_fold(0.0f64, |acc, (a, b)| Ok(acc.max(a.distance_sup(b)?)))
    }

    pub(crate) fn frames_mut(&mut self) -> &mut [Field] {
        &mut self.frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScheme {
    #[default]
    Implicit,
    SemiImplicit,
}

/// Extra terms of the backward equation `-u_t + delta u - kappa Lap u + H = F - shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardTerms {
    pub discount: f64,
    pub shift: f64,
    pub scheme: TimeScheme,
}

impl Default for BackwardTerms {
    fn default() -> Self {
        BackwardTerms {
            discount: 0.0,
            shift: 0.0,
            scheme: TimeScheme::Implicit,
        }
    }
}

fn check_frame(f: &Field, frame: usize) -> Result<()> {
    if f.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { frame })
    }
}

/// Backward HJB sweep with terminal data `u_T` taken from the problem.
pub fn hjb_backward_path(
    problem: &MfgProblem,
    m_path: &PathField,
    tg: &TimeGrid,
) -> Result<PathField> {
    hjb_backward(
        problem,
        m_path,
        tg,
        problem.terminal_field(),
        BackwardTerms::default(),
    )
}

/// Backward HJB sweep with explicit terminal data and extra terms.
pub fn hjb_backward(
    problem: &MfgProblem,
    m_path: &PathField,
    tg: &TimeGrid,
    terminal: &Field,
    terms: BackwardTerms,
) -> Result<PathField> {
    let grid = *problem.grid();
    if m_path.grid() != &grid || terminal.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    if m_path.frames().len() != tg.steps() + 1 {
        return Err(Error::InvalidArgument(
            "density path does not match the time grid".into(),
        ));
    }
    let dt = tg.dt();
    let n = grid.len();
    let ham = problem.upwind();
    let mut base_op = StencilOp::neg_laplacian(grid, problem.kappa());
    base_op.add_diagonal(&vec![1.0 / dt + terms.discount; n]);
    let mut frames = vec![Field::zeros(grid); tg.steps() + 1];
    frames[tg.steps()] = terminal.clone();
    let mut u_next = terminal.values().to_vec();
    for step in (0..tg.steps()).rev() {
        let coupling = problem.coupling_values(m_path.frame(step + 1).values());
        let rhs: Vec<f64> = (0..n)
            .map(|i| u_next[i] / dt + coupling[i] - terms.shift)
            .collect();
        let u = match terms.scheme {
            TimeScheme::Implicit => {
                newton_hjb_step(ham, &base_op, &rhs, &u_next).map_err(|e| match e {
                    Error::LinearSolve(_) | Error::NonConvergence { .. } => {
                        Error::NonFinite { frame: step }
                    }
                    other => other,
                })?
            }
            TimeScheme::SemiImplicit => {
                let hv = ham.value(&u_next);
                let explicit: Vec<f64> = rhs.iter().zip(&hv).map(|(r, h)| r - h).collect();
                base_op.solve(&explicit)?
            }
        };
        let f = Field::from_raw(grid, u);
        check_frame(&f, step)?;
        u_next = f.values().to_vec();
        frames[step] = f;
    }
    PathField::new(*tg, frames)
}

/// Newton solve of `c u - kappa Lap u + H(Du) = rhs`, where `base_op`
/// already holds `c I - kappa Lap`.
pub(crate) fn newton_hjb_step(
    ham: &crate::upwind::UpwindHamiltonian,
    base_op: &StencilOp,
    rhs: &[f64],
    guess: &[f64],
) -> Result<Vec<f64>> {
    let mut u = guess.to_vec();
    let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut last = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITERS {
        let lin = base_op.apply(&u);
        let hv = ham.value(&u);
        let resid: Vec<f64> = (0..u.len()).map(|i| lin[i] + hv[i] - rhs[i]).collect();
        let rn = resid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !rn.is_finite() {
            return Err(Error::NonConvergence {
                iterations: 0,
                residual: rn,
                history: vec![],
            });
        }
        if rn <= 1e-14 * scale {
            return Ok(u);
        }
        let mut jac = ham.linearize(&u);
        jac.add_scaled(base_op, 1.0);
        let du = jac.solve(&resid)?;
        let step = du.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (ui, di) in u.iter_mut().zip(&du) {
            *ui -= di;
        }
        let unorm = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if step <= 1e-15 * unorm || (rn >= last && rn <= 1e-11 * scale) {
            return Ok(u);
        }
        last = rn;
    }
    // piecewise-smooth Hamiltonians can stall at roundoff level near kinks
    let lin = base_op.apply(&u);
    let hv = ham.value(&u);
    let rn = (0..u.len())
        .map(|i| (lin[i] + hv[i] - rhs[i]).abs())
        .fold(0.0, f64::max);
    if rn <= 1e-10 * scale {
        Ok(u)
    } else {
        Err(Error::NonConvergence {
            iterations: NEWTON_MAX_ITERS,
            residual: rn,
            history: vec![],
        })
    }
}

/// Forward Fokker-Planck sweep driven by `u_path`, using the implicit scheme.
pub fn fp_forward_path(
    problem: &MfgProblem,
    u_path: &PathField,
    tg: &TimeGrid,
    m0: &Field,
) -> Result<PathField> {
    fp_forward(problem, u_path, tg, m0, TimeScheme::Implicit)
}

pub fn fp_forward(
    problem: &MfgProblem,
    u_path: &PathField,
    tg: &TimeGrid,
    m0: &Field,
    scheme: TimeScheme,
) -> Result<PathField> {
    let grid = *problem.grid();
    if u_path.grid() != &grid || m0.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    if u_path.frames().len() != tg.steps() + 1 {
        return Err(Error::InvalidArgument(
            "value path does not match the time grid".into(),
        ));
    }
    let dt = tg.dt();
    let n = grid.len();
    let ham = problem.upwind();
    let mut diffusion = StencilOp::neg_laplacian(grid, problem.kappa());
    diffusion.add_diagonal(&vec![1.0 / dt; n]);
    let mass0 = m0.integrate();

    let mut frames = Vec::with_capacity(tg.steps() + 1);
    frames.push(m0.clone());
    let mut m = m0.values().to_vec();
    for step in 0..tg.steps() {
        let next = match scheme {
            TimeScheme::Implicit => {
                let mut op = ham.fp_operator(u_path.frame(step).values());
                op.add_scaled(&diffusion, 1.0);
                let rhs: Vec<f64> = m.iter().map(|v| v / dt).collect();
                op.solve(&rhs)?
            }
            TimeScheme::SemiImplicit => {
                let u = u_path.frame(step + 1).values();
                tg.check_cfl(ham.transport_rate(u))?;
                let rhs: Vec<f64> = m.iter().map(|v| v / dt).collect();
                let diffused = diffusion.solve(&rhs)?;
                let transport = ham.fp_operator(u).apply(&diffused);
                diffused
                    .iter()
                    .zip(&transport)
                    .map(|(a, b)| a - dt * b)
                    .collect()
            }
        };
        let mut f = Field::from_raw(grid, next);
        check_frame(&f, step + 1)?;
        let mass = f.integrate();
        let drift = (mass - mass0).abs();
        if drift > MASS_TOL * mass0.abs().max(1.0) {
            return Err(Error::MassDrift {
                frame: step + 1,
                drift,
            });
        }
        // the scheme conserves mass exactly; remove accumulated roundoff
        if mass > 0.0 {
            f = f.scale(mass0 / mass);
        }
        let min = f.min();
        if min < -POSITIVITY_TOL {
            return Err(Error::NegativeDensity {
                frame: step + 1,
                min,
            });
        }
        m = f.values().to_vec();
        frames.push(f);
    }
    PathField::new(*tg, frames)
}

fn drift_at(drift: &[VectorField], n: usize) -> &VectorField {
    if drift.len() == 1 {
        &drift[0]
    } else {
        &drift[n]
    }
}

fn check_drift(drift: &[VectorField], grid: &Grid, tg: &TimeGrid) -> Result<()> {
    if drift.is_empty() || (drift.len() != 1 && drift.len() != tg.steps() + 1) {
        return Err(Error::InvalidArgument(
            "drift must be static (one frame) or have one frame per time level".into(),
        ));
    }
    if drift.iter().any(|v| v.grid() != grid) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Backward solve of `-v_t - kappa Lap v + Dv . V = f`, `v(T) = v_T`.
pub fn linear_parabolic_backward(
    kappa: f64,
    drift: &[VectorField],
    source: Option<&PathField>,
    v_t: &Field,
    tg: &TimeGrid,
) -> Result<PathField> {
    let grid = *v_t.grid();
    check_drift(drift, &grid, tg)?;
    if let Some(s) = source {
        if s.grid() != &grid {
            return Err(Error::GridMismatch);
        }
    }
    let dt = tg.dt();
    let n = grid.len();
    let mut diffusion = StencilOp::neg_laplacian(grid, kappa);
    diffusion.add_diagonal(&vec![1.0 / dt; n]);
    let mut frames = vec![Field::zeros(grid); tg.steps() + 1];
    frames[tg.steps()] = v_t.clone();
    for step in (0..tg.steps()).rev() {
        let (pf, pb) = split_drift(drift_at(drift, step));
        let mut op = hjb_transport(&grid, &pf, &pb);
        op.add_scaled(&diffusion, 1.0);
        let next = frames[step + 1].values();
        let rhs: Vec<f64> = match source {
            Some(s) => next
                .iter()
                .zip(s.frame(step).values())
                .map(|(v, f)| v / dt + f)
                .collect(),
            None => next.iter().map(|v| v / dt).collect(),
        };
        let f = Field::from_raw(grid, op.solve(&rhs)?);
        check_frame(&f, step)?;
        frames[step] = f;
    }
    PathField::new(*tg, frames)
}

/// Forward solve of `rho_t - kappa Lap rho - div(rho V) = div(F)`.
pub fn linear_fp_forward(
    kappa: f64,
    drift: &[VectorField],
    flux: Option<&[VectorField]>,
    rho0: &Field,
    tg: &TimeGrid,
) -> Result<PathField> {
    let grid = *rho0.grid();
    check_drift(drift, &grid, tg)?;
    if let Some(fl) = flux {
        check_drift(fl, &grid, tg)?;
    }
    let dt = tg.dt();
    let n = grid.len();
    let mut diffusion = StencilOp::neg_laplacian(grid, kappa);
    diffusion.add_diagonal(&vec![1.0 / dt; n]);
    let mass0 = rho0.integrate();
    let scale = rho0.norm(NormKind::L1).max(1.0);
    let mut frames = Vec::with_capacity(tg.steps() + 1);
    frames.push(rho0.clone());
    for step in 0..tg.steps() {
        let (pf, pb) = split_drift(drift_at(drift, step));
        let mut op = fp_transport(&grid, &pf, &pb);
        op.add_scaled(&diffusion, 1.0);
        let prev = frames[step].values();
        let rhs: Vec<f64> = match flux {
            Some(fl) => {
                let div = divergence(drift_at(fl, step + 1));
                prev.iter()
                    .zip(div.values())
                    .map(|(r, d)| r / dt + d)
                    .collect()
            }
            None => prev.iter().map(|r| r / dt).collect(),
        };
        let f = Field::from_raw(grid, op.solve(&rhs)?);
        check_frame(&f, step + 1)?;
        let mass = f.integrate();
        let drift_mass = (mass - mass0).abs();
        if drift_mass > MASS_TOL * scale {
            return Err(Error::MassDrift {
                frame: step + 1,
                drift: drift_mass,
            });
        }
        let f = f.add_constant(mass0 - mass);
        frames.push(f);
    }
    PathField::new(*tg, frames)
}

/// Worst relative discrepancy of `<A phi, psi> = <phi, A^T psi>` over random
/// fields, where `A = -Lap + L_V` is the HJB-side operator and `A^T` the
/// flux-form Fokker-Planck operator for the same drift.
pub fn adjointness_check(
    grid: &Grid,
    drift: &VectorField,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if drift.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("need at least one trial".into()));
    }
    let (pf, pb) = split_drift(drift);
    let mut hjb = hjb_transport(grid, &pf, &pb);
    hjb.add_scaled(&StencilOp::neg_laplacian(*grid, 1.0), 1.0);
    let mut fp = fp_transport(grid, &pf, &pb);
    fp.add_scaled(&StencilOp::neg_laplacian(*grid, 1.0), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vol = grid.cell_volume();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let phi: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let psi: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a_phi = hjb.apply(&phi);
        let at_psi = fp.apply(&psi);
        let lhs = vol * crate::grid::dot(&a_phi, &psi);
        let rhs = vol * crate::grid::dot(&phi, &at_psi);
        let l2 = |v: &[f64]| (vol * crate::grid::dot(v, v)).sqrt();
        let scale = l2(&a_phi) * l2(&psi) + l2(&phi) * l2(&at_psi);
        let rel = if scale > 0.0 {
            (lhs - rhs).abs() / scale
        } else {
            0.0
        };
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Fitted exponential decay of a norm profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearKernelReport {
    pub rate: f64,
    pub prefactor: f64,
    pub residual: f64,
}

/// Fits `values(t) ~ C exp(-rate * t)`.
pub fn decay_report(times: &[f64], values: &[f64]) -> Result<LinearKernelReport> {
    let fit = fit_exponential(times, values, FitModel::OneSided)?;
    Ok(LinearKernelReport {
        rate: fit.rate,
        prefactor: fit.prefactor,
        residual: fit.residual,
    })
}
