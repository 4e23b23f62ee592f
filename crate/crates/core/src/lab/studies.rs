use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{StudyReport, StudyRow};
use crate::error::{Error, Result};
use crate::grid::{gradient, Field, Grid};
use crate::kernels::{PathField, TimeGrid};
use crate::model::{convexity_bounds, monotonicity_margin};
use crate::problem::{normalize_density, MfgProblem};
use crate::solvers::{
    solve_discounted_evolution, solve_discounted_stationary, solve_ergodic, solve_finite_horizon,
    solve_finite_horizon_from, solve_infinite_horizon, solve_theta, ErgodicMethod, ErgodicSolution,
    FiniteHorizonSolution, SolverConfig, ThetaSolution,
};

/// Successive ratios must not exceed this for a geometric verdict.
pub const RATIO_BOUND: f64 = 0.7;
/// Sup-distance below which two solutions belong to the same cluster.
pub const CLUSTER_THRESHOLD: f64 = 1e-3;
/// Differences at or below this are exact zeros up to roundoff.
pub const ROUNDOFF_LEVEL: f64 = 1e-12;
/// Allowed growth of the horizon-limit bound between the first and any later horizon.
const BOUND_GROWTH: f64 = 1.1;

fn sup_diff(a: &Field, b: &Field) -> f64 {
    a.distance_sup(b).unwrap_or(f64::INFINITY)
}

/// `(q_prev, q_next)` decreases geometrically, or both are roundoff.
fn geometric_step(prev: f64, next: f64) -> bool {
    if prev <= ROUNDOFF_LEVEL && next <= ROUNDOFF_LEVEL {
        return true;
    }
    prev > 0.0 && next / prev <= RATIO_BOUND
}

/// Cauchy study of `u^T(t) - lambda (T - t)` as the horizon grows.
pub fn horizon_limit_study(
    problem: &MfgProblem,
    horizons: &[f64],
    t_probe: f64,
    cfg: &SolverConfig,
) -> Result<StudyReport> {
    if horizons.len() < 2 || horizons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "horizons must be at least two increasing values".into(),
        ));
    }
    if !(t_probe >= 0.0 && t_probe < 0.5 * horizons[0]) {
        return Err(Error::InvalidArgument(format!(
            "probe time {t_probe} must lie in [0, {})",
            0.5 * horizons[0]
        )));
    }
    let erg = solve_ergodic(problem, ErgodicMethod::Newton, cfg)?;
    let lambda = erg.lambda;
    let solves: Vec<Result<(Field, Field, f64)>> = horizons
        .par_iter()
        .map(|&t_end| {
            let sol = solve_finite_horizon(problem, t_end, cfg)?;
            let tg = *sol.time_grid();
            let bound = sol
                .u_path
                .frames()
                .iter()
                .enumerate()
                .map(|(k, u)| {
                    u.add_constant(-lambda * (t_end - tg.time(k)))
                        .norm(crate::grid::NormKind::Sup)
                })
                .fold(0.0, f64::max);
            let u = sol
                .u_path
                .at_time(t_probe)
                .add_constant(-lambda * (t_end - t_probe));
            let m = sol.m_path.at_time(t_probe).clone();
            Ok((u, m, bound))
        })
        .collect();

    let mut report = StudyReport::new(
        "horizon-limit",
        "T",
        &["bound", "delta_u", "delta_m", "ratio"],
    );
    report.summary.insert("lambda".into(), lambda);
    report.summary.insert("t_probe".into(), t_probe);
    let mut prev: Option<&(Field, Field, f64)> = None;
    let mut prev_delta: Option<f64> = None;
    let mut geometric = true;
    let mut bounds = Vec::new();
    for (t_end, res) in horizons.iter().zip(&solves) {
        match res {
            Ok(cur) => {
                bounds.push(cur.2);
                let (du, dm) = match prev {
                    Some(p) => (Some(sup_diff(&p.0, &cur.0)), Some(sup_diff(&p.1, &cur.1))),
                    None => (None, None),
                };
                let ratio = match (prev_delta, du) {
                    (Some(a), Some(b)) if a > 0.0 => Some(b / a),
                    _ => None,
                };
                let mut row = StudyRow::ok(*t_end, vec![Some(cur.2), du, dm, ratio]);
                if let (Some(a), Some(b)) = (prev_delta, du) {
                    let ok = geometric_step(a, b);
                    row.verdict = Some(ok);
                    geometric &= ok;
                }
                report.rows.push(row);
                prev = Some(cur);
                prev_delta = du;
            }
            Err(e) => {
                report.rows.push(StudyRow::failed(*t_end, 4, e.to_string()));
                prev = None;
                prev_delta = None;
                geometric = false;
            }
        }
    }
    let bounded = !bounds.is_empty()
        && bounds.iter().all(|b| b.is_finite())
        && bounds
            .iter()
            .all(|b| *b <= BOUND_GROWTH * bounds[0] + ROUNDOFF_LEVEL);
    let max_bound = bounds.iter().cloned().fold(0.0, f64::max);
    report.summary.insert("max_bound".into(), max_bound);
    report.verdicts.insert("geometric".into(), geometric);
    report.verdicts.insert("bounded".into(), bounded);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VanishingDiscountOptions {
    /// Added to theta before comparing; a nonzero value is a negative control.
    pub theta_shift: f64,
    /// Truncation horizon of the evolution comparison; estimated when absent.
    pub t_trunc: Option<f64>,
    /// Probe time of the evolution comparison, as a fraction of the horizon.
    pub probe_fraction: f64,
    /// Also compare the discounted evolution with the infinite-horizon solution.
    pub evolution: bool,
}

impl Default for VanishingDiscountOptions {
    fn default() -> Self {
        VanishingDiscountOptions {
            theta_shift: 0.0,
            t_trunc: None,
            probe_fraction: 0.25,
            evolution: true,
        }
    }
}

/// `e_delta = |u_delta - lambda/delta - u_bar - theta|_sup` along a decreasing discount sweep.
pub fn vanishing_discount_study(
    problem: &MfgProblem,
    deltas: &[f64],
    opts: &VanishingDiscountOptions,
    cfg: &SolverConfig,
) -> Result<StudyReport> {
    // positivity is checked per row by the solver, so a bad entry fails only its row
    if deltas.is_empty()
        || deltas.iter().any(|d| !d.is_finite())
        || deltas.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidArgument(
            "discounts must be finite and decreasing".into(),
        ));
    }
    if !(opts.probe_fraction > 0.0 && opts.probe_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "probe fraction must lie in (0, 1)".into(),
        ));
    }
    let erg = solve_ergodic(problem, ErgodicMethod::Newton, cfg)?;
    let theta = solve_theta(problem, &erg, cfg)?;
    let target = erg.u.add_constant(theta.theta + opts.theta_shift);

    let mut report = StudyReport::new(
        "vanishing-discount",
        "delta",
        &["e_delta", "ratio", "evolution_gap"],
    );
    report.summary.insert("lambda".into(), erg.lambda);
    report.summary.insert("theta".into(), theta.theta);

    let evolution = if opts.evolution {
        let inf = solve_infinite_horizon(problem, opts.t_trunc, &erg, cfg)?;
        let t_trunc = inf.horizon();
        let t_probe = opts.probe_fraction * t_trunc;
        let v = inf.normalized(theta.theta + opts.theta_shift);
        report.summary.insert("t_trunc".into(), t_trunc);
        report.summary.insert("t_probe".into(), t_probe);
        Some((t_trunc, t_probe, v.at_time(t_probe).clone()))
    } else {
        None
    };

    let rows: Vec<Result<(f64, Option<f64>)>> = deltas
        .par_iter()
        .map(|&delta| {
            let ds = solve_discounted_stationary(problem, delta, cfg)?;
            let e = sup_diff(&ds.u.add_constant(-erg.lambda / delta), &target);
            let gap = match &evolution {
                Some((t_trunc, t_probe, v_probe)) => {
                    let ev = solve_discounted_evolution(problem, delta, *t_trunc, cfg)?;
                    let u = ev
                        .u_path
                        .at_time(*t_probe)
                        .add_constant(-erg.lambda / delta);
                    Some(sup_diff(&u, v_probe))
                }
                None => None,
            };
            Ok((e, gap))
        })
        .collect();

    let mut prev: Option<f64> = None;
    let mut decreasing = true;
    let mut ratios_ok = true;
    for (delta, res) in deltas.iter().zip(rows) {
        match res {
            Ok((e, gap)) => {
                let ratio = prev.filter(|p| *p > 0.0).map(|p| e / p);
                let mut row = StudyRow::ok(*delta, vec![Some(e), ratio, gap]);
                let ok = match prev {
                    Some(p) => {
                        let both_zero = p <= ROUNDOFF_LEVEL && e <= ROUNDOFF_LEVEL;
                        decreasing &= both_zero || e < p;
                        let step = geometric_step(p, e);
                        ratios_ok &= step;
                        step
                    }
                    None => e.is_finite(),
                };
                row.verdict = Some(ok);
                report.rows.push(row);
                prev = Some(e);
            }
            Err(err) => {
                report
                    .rows
                    .push(StudyRow::failed(*delta, 3, err.to_string()));
                prev = None;
                decreasing = false;
                ratios_ok = false;
            }
        }
    }
    report.verdicts.insert("decreasing".into(), decreasing);
    report.verdicts.insert("ratio".into(), ratios_ok);
    Ok(report)
}

/// Tails of `|v(t) - u_bar - theta|` and `|mu(t) - m_bar|` for the
/// infinite-horizon solution normalized by `lim int v = theta`.
pub fn commutation_check(
    problem: &MfgProblem,
    erg: &ErgodicSolution,
    theta: &ThetaSolution,
    t_trunc: Option<f64>,
    tol: f64,
    cfg: &SolverConfig,
) -> Result<StudyReport> {
    let inf = solve_infinite_horizon(problem, t_trunc, erg, cfg)?;
    let v = inf.normalized(theta.theta);
    let target = erg.u.add_constant(theta.theta);
    let tg = *v.time_grid();
    let mut report = StudyReport::new("commutation", "t", &["v_gap", "mu_gap", "average"]);
    for (k, (vf, mf)) in v.frames().iter().zip(inf.mu_path.frames()).enumerate() {
        report.rows.push(StudyRow::ok(
            tg.time(k),
            vec![
                Some(sup_diff(vf, &target)),
                Some(sup_diff(mf, &erg.m)),
                Some(vf.integrate()),
            ],
        ));
    }
    let t_tail = 0.9 * tg.horizon();
    let v_tail = sup_diff(v.at_time(t_tail), &target);
    let mu_tail = sup_diff(inf.mu_path.at_time(t_tail), &erg.m);
    for (key, value) in [
        ("t_trunc", tg.horizon()),
        ("t_tail", t_tail),
        ("v_tail", v_tail),
        ("mu_tail", mu_tail),
        ("theta", theta.theta),
        ("c_bar", inf.c_bar),
        ("tail_drift", inf.tail_drift),
    ] {
        report.summary.insert(key.into(), value);
    }
    if !inf.tail_flat {
        report.diagnostics.push(format!(
            "tail not flat: |a(0.9T) - a(T)| = {:e}; the truncation horizon may be too short",
            inf.tail_drift
        ));
    }
    report.verdicts.insert("v_tail".into(), v_tail <= tol);
    report.verdicts.insert("mu_tail".into(), mu_tail <= tol);
    report.verdicts.insert("tail_flat".into(), inf.tail_flat);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityGap {
    /// `alpha int int (m_A + m_B) |Du_A - Du_B|^2`
    pub convexity: f64,
    /// `gamma int int (m_A - m_B)^2 + gamma int (m_A(T) - m_B(T))^2`
    pub antimonotone: f64,
    pub alpha: f64,
    pub gamma: f64,
}

/// Both sides of the uniqueness inequality for two solutions of one problem.
pub fn duality_gap(
    a: &FiniteHorizonSolution,
    b: &FiniteHorizonSolution,
    problem: &MfgProblem,
) -> Result<DualityGap> {
    if a.u_path.grid() != problem.grid() || b.u_path.grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    if a.time_grid() != b.time_grid() {
        return Err(Error::InvalidArgument(
            "solutions use different time grids".into(),
        ));
    }
    let tg = *a.time_grid();
    let dt = tg.dt();
    let grid = *problem.grid();
    let vol = grid.cell_volume();
    let k = a.gradient_bound.max(b.gradient_bound);
    let alpha = convexity_bounds(problem.hamiltonian(), k).alpha;
    let m_bound = a.density_bound.max(b.density_bound).max(1.0);
    let gamma = monotonicity_margin(problem.coupling(), &grid, m_bound)?.gamma_star;

    let mut conv = 0.0;
    let mut anti = 0.0;
    for step in 0..=tg.steps() {
        // trapezoid weights in time
        let w = if step == 0 || step == tg.steps() {
            0.5 * dt
        } else {
            dt
        };
        let (ma, mb) = (a.m_path.frame(step).values(), b.m_path.frame(step).values());
        let ga = gradient(a.u_path.frame(step));
        let gb = gradient(b.u_path.frame(step));
        let diff = ga.sub(&gb)?;
        for i in 0..grid.len() {
            let g = diff.at(i);
            let g2 = g[0] * g[0] + g[1] * g[1];
            conv += w * vol * (ma[i] + mb[i]) * g2;
            anti += w * vol * (ma[i] - mb[i]).powi(2);
        }
    }
    let last = tg.steps();
    let terminal: f64 = a
        .m_path
        .frame(last)
        .values()
        .iter()
        .zip(b.m_path.frame(last).values())
        .map(|(x, y)| vol * (x - y).powi(2))
        .sum();
    Ok(DualityGap {
        convexity: alpha * conv,
        antimonotone: gamma * (anti + terminal),
        alpha,
        gamma,
    })
}

/// `count` smooth positive unit-mass densities drawn from `seed`.
pub fn random_densities(grid: &Grid, count: usize, seed: u64) -> Result<Vec<Field>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let terms: Vec<(usize, usize, f64, f64)> = (0..3)
                .map(|k| {
                    let axis = if grid.dim() == 2 {
                        rng.gen_range(0..2)
                    } else {
                        0
                    };
                    (
                        k + 1,
                        axis,
                        rng.gen_range(-0.3..0.3),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect();
            let f = Field::from_fn(*grid, |x| {
                1.0 + terms
                    .iter()
                    .map(|(k, axis, amp, phase)| {
                        amp * (2.0 * std::f64::consts::PI * (*k as f64 * x[*axis] + phase)).cos()
                    })
                    .sum::<f64>()
            });
            normalize_density(f)
        })
        .collect()
}

/// Multi-start probe: solves from each seed density and clusters the results.
pub fn multiplicity_probe(
    problem: &MfgProblem,
    horizon: f64,
    seeds: &[Field],
    cfg: &SolverConfig,
) -> Result<StudyReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let tg = TimeGrid::with_step(horizon, cfg.dt)?;
    for s in seeds {
        if s.grid() != problem.grid() {
            return Err(Error::GridMismatch);
        }
        crate::problem::check_density(s)?;
    }
    let sols: Vec<Result<FiniteHorizonSolution>> = seeds
        .par_iter()
        .map(|s| solve_finite_horizon_from(problem, &PathField::constant(tg, s), cfg))
        .collect();

    let ok: Vec<(usize, &FiniteHorizonSolution)> = sols
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.as_ref().ok().map(|s| (k, s)))
        .collect();
    let dist = |a: &FiniteHorizonSolution, b: &FiniteHorizonSolution| {
        let dm = a.m_path.sup_distance(&b.m_path).unwrap_or(f64::INFINITY);
        let du = a.u_path.sup_distance(&b.u_path).unwrap_or(f64::INFINITY);
        dm.max(du)
    };
    // single-linkage clustering
    let mut label: Vec<usize> = (0..ok.len()).collect();
    let mut max_pair: f64 = 0.0;
    for i in 0..ok.len() {
        for j in (i + 1)..ok.len() {
            let d = dist(ok[i].1, ok[j].1);
            max_pair = max_pair.max(d);
            if d <= CLUSTER_THRESHOLD {
                let (from, to) = (label[j], label[i]);
                for l in label.iter_mut() {
                    if *l == from {
                        *l = to;
                    }
                }
            }
        }
    }
    let mut distinct = label.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let cluster_of = |k: usize| {
        ok.iter()
            .position(|(idx, _)| *idx == k)
            .map(|p| distinct.binary_search(&label[p]).unwrap_or(0) as f64)
    };

    let mut report = StudyReport::new(
        "multiplicity",
        "seed",
        &["iterations", "residual", "cluster", "distance_to_first"],
    );
    let first = ok.first().map(|(_, s)| *s);
    for (k, s) in sols.iter().enumerate() {
        match s {
            Ok(sol) => report.rows.push(StudyRow::ok(
                k as f64,
                vec![
                    Some(sol.iterations as f64),
                    Some(sol.residual),
                    cluster_of(k),
                    first.map(|f| dist(f, sol)),
                ],
            )),
            Err(e) => {
                let mut row = StudyRow::failed(k as f64, 4, e.to_string());
                row.verdict = None;
                report.rows.push(row);
            }
        }
    }
    let m_bound = ok.iter().map(|(_, s)| s.density_bound).fold(1.0, f64::max);
    let margin = monotonicity_margin(problem.coupling(), problem.grid(), m_bound)?;
    let failures = sols.len() - ok.len();
    report
        .summary
        .insert("clusters".into(), distinct.len() as f64);
    report
        .summary
        .insert("nonconverged".into(), failures as f64);
    report
        .summary
        .insert("gamma_star".into(), margin.gamma_star);
    report
        .summary
        .insert("max_pairwise_distance".into(), max_pair);
    report.verdicts.insert(
        "single_cluster".into(),
        distinct.len() == 1 && failures == 0,
    );
    Ok(report)
}
