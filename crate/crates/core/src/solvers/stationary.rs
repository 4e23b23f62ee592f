use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{solve_finite_horizon, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::linalg::{condition_estimate, dense_solve, StencilOp};
use crate::problem::MfgProblem;

const NORMALIZATION_TOL: f64 = 1e-10;
const THETA_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErgodicMethod {
    Newton,
    Longtime,
}

#[derive(Debug, Clone)]
pub struct ErgodicSolution {
    pub lambda: f64,
    /// Zero-mean value function.
    pub u: Field,
    /// Unit-mass stationary density.
    pub m: Field,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub method: ErgodicMethod,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    pub delta: f64,
    pub u: Field,
    pub m: Field,
    pub hjb_residual: f64,
    pub fp_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ThetaSolution {
    pub theta: f64,
    /// Zero-mean corrector of the value function.
    pub w: Field,
    /// Zero-mean corrector of the density.
    pub rho: Field,
    /// Sup residual of the assembled linear system.
    pub residual: f64,
    /// `|theta - int(F_m rho - u - H_p . Dw)|`, the integrated first equation.
    pub solvability_gap: f64,
}

pub(crate) fn add_stencil(
    mat: &mut DMatrix<f64>,
    op: &StencilOp,
    row0: usize,
    col0: usize,
    scale: f64,
) {
    let g = *op.grid();
    for i in 0..g.len() {
        mat[(row0 + i, col0 + i)] += scale * op.diag(i);
        for axis in 0..g.dim() {
            for off in [-1isize, 1] {
                let j = g.neighbor(i, axis, off);
                mat[(row0 + i, col0 + j)] += scale * op.off(i, axis, off);
            }
        }
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// `(delta u + lambda - kappa Lap u + H(Du) - F(m), -kappa Lap m + L(u)^T m)`.
fn stationary_residuals(
    problem: &MfgProblem,
    delta: f64,
    lambda: f64,
    u: &[f64],
    m: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let lap = StencilOp::neg_laplacian(*problem.grid(), problem.kappa());
    let ham = problem.upwind();
    let lu = lap.apply(u);
    let hv = ham.value(u);
    let f = problem.coupling_values(m);
    let r1 = (0..u.len())
        .map(|i| delta * u[i] + lambda + lu[i] + hv[i] - f[i])
        .collect();
    let lm = lap.apply(m);
    let tm = ham.fp_operator(u).apply(m);
    let r2 = lm.iter().zip(&tm).map(|(a, b)| a + b).collect();
    (r1, r2)
}

/// Damped Newton on the stationary pair. With `delta = 0` the ergodic
/// constant is an extra unknown and `u` is pinned to zero mean.
fn stationary_newton(
    problem: &MfgProblem,
    delta: f64,
    cfg: &SolverConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>, usize)> {
    let grid = *problem.grid();
    let n = grid.len();
    let vol = grid.cell_volume();
    let ergodic = delta == 0.0;
    let size = if ergodic { 2 * n + 1 } else { 2 * n };
    let lap = StencilOp::neg_laplacian(grid, problem.kappa());
    let ham = problem.upwind();

    let mut m = vec![1.0; n];
    let f0 = problem.coupling_values(&m);
    let mean_f = f0.iter().sum::<f64>() / n as f64;
    let (mut lambda, mut u) = if ergodic {
        (mean_f, vec![0.0; n])
    } else {
        (0.0, vec![mean_f / delta; n])
    };

    let full_residual = |lambda: f64, u: &[f64], m: &[f64]| -> Vec<f64> {
        let (r1, r2) = stationary_residuals(problem, delta, lambda, u, m);
        let mut r = Vec::with_capacity(size);
        r.extend(r1);
        r.extend(r2);
        r[n] = vol * m.iter().sum::<f64>() - 1.0;
        if ergodic {
            r.push(vol * u.iter().sum::<f64>());
        }
        r
    };

    let scale = 1.0f64.max(sup(&f0));
    let mut r = full_residual(lambda, &u, &m);
    let mut merit = sup(&r);
    for it in 0..cfg.newton_max_iters {
        if !merit.is_finite() {
            break;
        }
        if merit <= cfg.newton_tol * scale {
            return Ok((lambda, u, m, it));
        }
        let mut jac = DMatrix::<f64>::zeros(size, size);
        add_stencil(&mut jac, &lap, 0, 0, 1.0);
        add_stencil(&mut jac, &ham.linearize(&u), 0, 0, 1.0);
        let fm = problem.coupling_derivatives(&m);
        for i in 0..n {
            jac[(i, i)] += delta;
            jac[(i, n + i)] -= fm[i];
            if ergodic {
                jac[(i, 2 * n)] = 1.0;
            }
        }
        ham.add_transport_jacobian(&u, &m, &mut jac, n, 0, 1.0);
        add_stencil(&mut jac, &lap, n, n, 1.0);
        add_stencil(&mut jac, &ham.fp_operator(&u), n, n, 1.0);
        jac.row_mut(n).fill(0.0);
        for j in 0..n {
            jac[(n, n + j)] = vol;
            if ergodic {
                jac[(2 * n, j)] = vol;
            }
        }
        let dz = dense_solve(jac, &r)?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let u_try: Vec<f64> = u.iter().zip(&dz[..n]).map(|(a, d)| a - alpha * d).collect();
            let m_try: Vec<f64> = m
                .iter()
                .zip(&dz[n..2 * n])
                .map(|(a, d)| a - alpha * d)
                .collect();
            let l_try = if ergodic {
                lambda - alpha * dz[2 * n]
            } else {
                0.0
            };
            let r_try = full_residual(l_try, &u_try, &m_try);
            let merit_try = sup(&r_try);
            if merit_try.is_finite() && merit_try <= (1.0 - 1e-4 * alpha) * merit {
                u = u_try;
                m = m_try;
                lambda = l_try;
                r = r_try;
                merit = merit_try;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // stalled at roundoff: accept when already tiny
            if merit <= 1e3 * cfg.newton_tol * scale {
                return Ok((lambda, u, m, it));
            }
            break;
        }
    }
    if merit <= cfg.newton_tol * scale {
        return Ok((lambda, u, m, cfg.newton_max_iters));
    }
    Err(Error::NonConvergence {
        iterations: cfg.newton_max_iters,
        residual: merit,
        history: vec![],
    })
}

fn check_density_positive(m: &Field) -> Result<()> {
    if m.min() <= 0.0 {
        return Err(Error::Singular(format!(
            "stationary density is not positive (min {:e})",
            m.min()
        )));
    }
    Ok(())
}

fn check_normalization(what: &str, value: f64, target: f64) -> Result<()> {
    if (value - target).abs() > NORMALIZATION_TOL {
        return Err(Error::Singular(format!(
            "{what} normalization off by {:e}",
            value - target
        )));
    }
    Ok(())
}

/// Stationary ergodic triple `(lambda, u, m)` with `int u = 0`, `int m = 1`.
pub fn solve_ergodic(
    problem: &MfgProblem,
    method: ErgodicMethod,
    cfg: &SolverConfig,
) -> Result<ErgodicSolution> {
    cfg.validate()?;
    match method {
        ErgodicMethod::Newton => match ergodic_newton(problem, cfg) {
            Ok(s) => Ok(s),
            Err(e @ (Error::NonConvergence { .. } | Error::Singular(_)))
                if cfg.ergodic_fallback =>
            {
                ergodic_longtime(problem, cfg).map_err(|_| e)
            }
            Err(e) => Err(e),
        },
        ErgodicMethod::Longtime => ergodic_longtime(problem, cfg),
    }
}

fn ergodic_newton(problem: &MfgProblem, cfg: &SolverConfig) -> Result<ErgodicSolution> {
    let grid = *problem.grid();
    let (lambda, u, m, iterations) = stationary_newton(problem, 0.0, cfg)?;
    build_ergodic(
        problem,
        grid,
        lambda,
        u,
        m,
        ErgodicMethod::Newton,
        iterations,
    )
}

fn build_ergodic(
    problem: &MfgProblem,
    grid: Grid,
    lambda: f64,
    u: Vec<f64>,
    m: Vec<f64>,
    method: ErgodicMethod,
    iterations: usize,
) -> Result<ErgodicSolution> {
    let (r1, r2) = stationary_residuals(problem, 0.0, lambda, &u, &m);
    let u = Field::from_values(grid, u)?;
    let m = Field::from_values(grid, m)?;
    check_normalization("value", u.integrate(), 0.0)?;
    check_normalization("mass", m.integrate(), 1.0)?;
    check_density_positive(&m)?;
    Ok(ErgodicSolution {
        lambda,
        u,
        m,
        hjb_residual: sup(&r1),
        fp_residual: sup(&r2),
        method,
        iterations,
    })
}

/// Long finite horizon: `m` from the middle frame, `lambda` from the slope
/// of `int u(t)` over the middle third.
fn ergodic_longtime(problem: &MfgProblem, cfg: &SolverConfig) -> Result<ErgodicSolution> {
    let horizon = cfg.longtime_horizon / problem.kappa();
    let sol = solve_finite_horizon(problem, horizon, cfg)?;
    let tg = *sol.time_grid();
    let mid = tg.steps() / 2;
    let (lo, hi) = (tg.steps() / 3, 2 * tg.steps() / 3);
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .map(|k| (tg.time(k), sol.u_path.frame(k).integrate()))
        .collect();
    let np = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / np;
    let am = pts.iter().map(|p| p.1).sum::<f64>() / np;
    let stt: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let sta: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - am)).sum();
    let lambda = -sta / stt;
    let u_mid = sol.u_path.frame(mid);
    let u = u_mid.add_constant(-u_mid.mean()).into_values();
    let m_mid = sol.m_path.frame(mid);
    let m = m_mid.scale(1.0 / m_mid.integrate()).into_values();
    build_ergodic(
        problem,
        *problem.grid(),
        lambda,
        u,
        m,
        ErgodicMethod::Longtime,
        sol.iterations,
    )
}

/// Runs both ergodic methods and returns them with `|lambda_newton - lambda_longtime|`.
pub fn cross_validate_ergodic(
    problem: &MfgProblem,
    cfg: &SolverConfig,
) -> Result<(ErgodicSolution, ErgodicSolution, f64)> {
    let strict = SolverConfig {
        ergodic_fallback: false,
        ..*cfg
    };
    let a = solve_ergodic(problem, ErgodicMethod::Newton, &strict)?;
    let b = solve_ergodic(problem, ErgodicMethod::Longtime, &strict)?;
    let gap = (a.lambda - b.lambda).abs();
    Ok((a, b, gap))
}

/// Discounted stationary pair `delta u - kappa Lap u + H = F(m)`, `int m = 1`.
pub fn solve_discounted_stationary(
    problem: &MfgProblem,
    delta: f64,
    cfg: &SolverConfig,
) -> Result<DiscountedSolution> {
    cfg.validate()?;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "discount must be positive, got {delta}"
        )));
    }
    let grid = *problem.grid();
    let (_, u, m, iterations) = stationary_newton(problem, delta, cfg)?;
    let (r1, r2) = stationary_residuals(problem, delta, 0.0, &u, &m);
    let u = Field::from_values(grid, u)?;
    let m = Field::from_values(grid, m)?;
    check_normalization("mass", m.integrate(), 1.0)?;
    if m.min() < -crate::kernels::POSITIVITY_TOL {
        return Err(Error::NegativeDensity {
            frame: 0,
            min: m.min(),
        });
    }
    Ok(DiscountedSolution {
        delta,
        u,
        m,
        hjb_residual: sup(&r1),
        fp_residual: sup(&r2),
        iterations,
    })
}

/// Linearized ergodic system in `(w, rho, theta)`:
///
/// ```text
/// theta + u - kappa Lap w + H_p(Du) . Dw = F_m(m) rho
/// -kappa Lap rho - div(rho H_p(Du)) - div(m H_pp(Du) Dw) = 0
/// ```
///
/// with `int w = int rho = 0`, solved directly.
pub fn solve_theta(
    problem: &MfgProblem,
    erg: &ErgodicSolution,
    cfg: &SolverConfig,
) -> Result<ThetaSolution> {
    cfg.validate()?;
    let grid = *problem.grid();
    if erg.u.grid() != &grid {
        return Err(Error::GridMismatch);
    }
    let n = grid.len();
    let vol = grid.cell_volume();
    let ham = problem.upwind();
    let lap = StencilOp::neg_laplacian(grid, problem.kappa());
    let u = erg.u.values();
    let m = erg.m.values();
    let lin = ham.linearize(u);
    let fm = problem.coupling_derivatives(m);

    let size = 2 * n + 1;
    let mut a = DMatrix::<f64>::zeros(size, size);
    add_stencil(&mut a, &lap, 0, 0, 1.0);
    add_stencil(&mut a, &lin, 0, 0, 1.0);
    for i in 0..n {
        a[(i, n + i)] -= fm[i];
        a[(i, 2 * n)] = 1.0;
    }
    ham.add_transport_jacobian(u, m, &mut a, n, 0, 1.0);
    add_stencil(&mut a, &lap, n, n, 1.0);
    add_stencil(&mut a, &ham.fp_operator(u), n, n, 1.0);
    a.row_mut(n).fill(0.0);
    for j in 0..n {
        a[(n, n + j)] = vol;
        a[(2 * n, j)] = vol;
    }
    let mut b = vec![0.0; size];
    for i in 0..n {
        b[i] = -u[i];
    }
    let x = dense_solve(a.clone(), &b).map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!(
            "{msg}; condition estimate {:e}",
            condition_estimate(&a)
        )),
        other => other,
    })?;
    let ax = &a * nalgebra::DVector::from_column_slice(&x);
    let residual = ax
        .iter()
        .zip(&b)
        .fold(0.0f64, |acc, (p, q)| acc.max((p - q).abs()));
    if !(residual <= THETA_RESIDUAL_TOL * 1.0f64.max(sup(&b))) {
        return Err(Error::Singular(format!(
            "theta system residual {residual:e}; condition estimate {:e}",
            condition_estimate(&a)
        )));
    }
    let w = Field::from_values(grid, x[..n].to_vec())?;
    let rho = Field::from_values(grid, x[n..2 * n].to_vec())?;
    let theta = x[2 * n];
    let lw = lin.apply(w.values());
    let reduced = vol
        * (0..n)
            .map(|i| fm[i] * rho.values()[i] - u[i] - lw[i])
            .sum::<f64>();
    Ok(ThetaSolution {
        theta,
        w,
        rho,
        residual,
        solvability_gap: (theta - reduced).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        CouplingSpec, Expr, HamiltonianFamily, HamiltonianSpec, Term, TerminalSpec,
    };

    fn problem(n: usize, slope: f64, amp: f64) -> MfgProblem {
        MfgProblem::from_expressions(
            Grid::new(n, 1).unwrap(),
            1.0,
            HamiltonianSpec::new(HamiltonianFamily::Quadratic),
            CouplingSpec {
                base: Expr::zero().with(Term::Sin { amp, k: 1, axis: 0 }),
                slope,
                ..Default::default()
            },
            TerminalSpec::default(),
            &Expr::constant(1.0),
        )
        .unwrap()
    }

    #[test]
    fn zero_data() {
        let s = solve_ergodic(
            &problem(32, 0.0, 0.0),
            ErgodicMethod::Newton,
            &SolverConfig::default(),
        )
        .unwrap();
        assert!(s.lambda.abs() < 1e-12);
        assert!(s.u.norm(crate::grid::NormKind::Sup) < 1e-12);
        assert!(s.m.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn homogeneous_closed_forms() {
        let p = problem(32, 1.0, 0.0);
        let cfg = SolverConfig::default();
        let s = solve_ergodic(&p, ErgodicMethod::Newton, &cfg).unwrap();
        assert!((s.lambda - 1.0).abs() < 1e-10);
        let d = solve_discounted_stationary(&p, 0.1, &cfg).unwrap();
        assert!(d.u.values().iter().all(|v| (v - 10.0).abs() < 1e-9));
        let t = solve_theta(&p, &s, &cfg).unwrap();
        assert!(t.theta.abs() < 1e-12 && t.w.norm(crate::grid::NormKind::Sup) < 1e-12);
    }

    #[test]
    fn nontrivial_residuals() {
        let p = problem(64, 1.0, 0.5);
        let cfg = SolverConfig::default();
        let s = solve_ergodic(&p, ErgodicMethod::Newton, &cfg).unwrap();
        assert_eq!(s.method, ErgodicMethod::Newton);
        assert!(s.hjb_residual < 1e-10 && s.fp_residual < 1e-10);
        assert!(s.m.min() > 0.0);
        let d = solve_discounted_stationary(&p, 0.1, &cfg).unwrap();
        assert!(d.hjb_residual < 1e-8 && d.fp_residual < 1e-8);
        let t = solve_theta(&p, &s, &cfg).unwrap();
        assert!(t.solvability_gap < 1e-10);
        assert!(t.w.integrate().abs() < 1e-10 && t.rho.integrate().abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_discount() {
        assert!(
            solve_discounted_stationary(&problem(16, 1.0, 0.0), 0.0, &SolverConfig::default())
                .is_err()
        );
    }
}
