//! Numerical checks of the linear decay estimates behind the long-time analysis.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_exponential, ExpFit, FitModel};
use super::report::LemmaReport;
use super::turnpike::{decay_floor, FIT_RESIDUAL_MAX};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, NormKind, VectorField};
use crate::kernels::{linear_fp_forward, linear_parabolic_backward, PathField, TimeGrid};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
/// Discounts at which the weighted bound is evaluated.
pub const WEIGHTED_DISCOUNTS: [f64; 2] = [0.0, 0.1];
/// Weights `eps` of the integrability bound.
pub const INTEGRABILITY_EPS: [f64; 2] = [0.1, 1.0];
/// Fraction of the horizon at which the weighted integral starts.
const WEIGHTED_START: f64 = 0.25;
const FLUX_AMP: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftSpec {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// Smooth static drift, each component bounded by `amp`, drawn from `seed`.
    Random {
        amp: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaCase {
    pub name: String,
    pub kappa: f64,
    pub n: usize,
    #[serde(default = "one")]
    pub dim: usize,
    pub horizon: f64,
    pub dt: f64,
    pub drift: DriftSpec,
    /// Wavenumber of the cosine initial or terminal datum.
    #[serde(default = "one_u32")]
    pub mode: u32,
}

fn one() -> usize {
    1
}

fn one_u32() -> u32 {
    1
}

impl LemmaCase {
    pub fn heat(name: &str, kappa: f64, n: usize, horizon: f64, dt: f64) -> Self {
        LemmaCase {
            name: name.to_string(),
            kappa,
            n,
            dim: 1,
            horizon,
            dt,
            drift: DriftSpec::Zero,
            mode: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "case {}: diffusion must be positive",
                self.name
            )));
        }
        if self.mode == 0 {
            return Err(Error::InvalidArgument(format!(
                "case {}: mode must be at least 1",
                self.name
            )));
        }
        match &self.drift {
            DriftSpec::Constant { value } if value.len() != self.dim => {
                Err(Error::InvalidArgument(format!(
                    "case {}: constant drift needs {} components",
                    self.name, self.dim
                )))
            }
            DriftSpec::Random { amp, .. } if !(amp.is_finite() && *amp >= 0.0) => {
                Err(Error::InvalidArgument(format!(
                    "case {}: drift amplitude must be finite and nonnegative",
                    self.name
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Samples the static drift of a case.
pub fn sample_drift(grid: &Grid, spec: &DriftSpec) -> Result<VectorField> {
    match spec {
        DriftSpec::Zero => Ok(VectorField::zeros(*grid)),
        DriftSpec::Constant { value } => {
            if value.len() != grid.dim() {
                return Err(Error::InvalidArgument(
                    "constant drift has the wrong dimension".into(),
                ));
            }
            Ok(VectorField::constant(*grid, value))
        }
        DriftSpec::Random { amp, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let d = grid.dim();
            let comps = (0..d)
                .map(|_| {
                    // three modes, total weight <= 1
                    let terms: Vec<(f64, usize, f64, f64)> = (1..=3)
                        .map(|k| {
                            (
                                k as f64,
                                rng.gen_range(0..d),
                                rng.gen_range(-1.0..1.0) / 3.0,
                                rng.gen_range(0.0..1.0),
                            )
                        })
                        .collect();
                    (0..grid.len())
                        .map(|i| {
                            let x = grid.coords(i);
                            amp * terms
                                .iter()
                                .map(|(k, axis, a, phase)| {
                                    a * (TWO_PI * (k * x[*axis] + phase)).cos()
                                })
                                .sum::<f64>()
                        })
                        .collect()
                })
                .collect();
            VectorField::from_components(*grid, comps)
        }
    }
}

fn cos_mode(grid: &Grid, k: u32) -> Field {
    Field::from_fn(*grid, |x| (TWO_PI * k as f64 * x[0]).cos())
}

fn l2(f: &Field) -> f64 {
    f.norm(NormKind::L2)
}

/// Trapezoid rule on a uniform time grid.
fn trapezoid(dt: f64, values: &[f64]) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}

/// One-sided fit of a decaying profile above its noise floor.
fn fit_decay(times: &[f64], values: &[f64]) -> Result<ExpFit> {
    let floor = decay_floor(values);
    let (t, v): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > floor)
        .map(|(t, v)| (*t, *v))
        .unzip();
    fit_exponential(&t, &v, FitModel::OneSided)
}

fn report(lemma: &str, case: &LemmaCase) -> LemmaReport {
    LemmaReport {
        lemma: lemma.to_string(),
        case: case.name.clone(),
        constants: BTreeMap::new(),
        pass: false,
        flagged: false,
        diagnostics: Vec::new(),
    }
}

fn apply_fit(rep: &mut LemmaReport, fit: &Result<ExpFit>) {
    match fit {
        Ok(f) => {
            rep.constants.insert("nu".into(), f.rate);
            rep.constants.insert("fit_residual".into(), f.residual);
            if f.residual > FIT_RESIDUAL_MAX {
                rep.flagged = true;
                rep.diagnostics.push(format!(
                    "fit residual {:.3e} above {FIT_RESIDUAL_MAX}",
                    f.residual
                ));
            }
        }
        Err(e) => {
            rep.flagged = true;
            rep.diagnostics.push(e.to_string());
        }
    }
}

/// `||v~(t)||_2 <= C e^{-nu (T - t)} ||v~_T||_2` for the backward linear equation with `f = 0`.
fn hj_decay(
    case: &LemmaCase,
    grid: &Grid,
    drift: &VectorField,
    tg: &TimeGrid,
) -> Result<LemmaReport> {
    let v_t = cos_mode(grid, case.mode);
    let v = linear_parabolic_backward(case.kappa, std::slice::from_ref(drift), None, &v_t, tg)?;
    let norms: Vec<f64> = v
        .frames()
        .iter()
        .map(|f| l2(&f.add_constant(-f.mean())))
        .collect();
    let last = *norms.last().unwrap_or(&0.0);
    // time to the horizon, increasing
    let s: Vec<f64> = tg.times().iter().rev().map(|t| tg.horizon() - t).collect();
    let profile: Vec<f64> = norms.iter().rev().cloned().collect();
    let fit = fit_decay(&s, &profile);
    let mut rep = report("hj-decay", case);
    apply_fit(&mut rep, &fit);
    if let Ok(f) = fit {
        let c = s
            .iter()
            .zip(&profile)
            .map(|(si, p)| p / ((-f.rate * si).exp() * last))
            .fold(0.0, f64::max);
        rep.constants.insert("c".into(), c);
        rep.pass = f.rate > 0.0 && c.is_finite();
    }
    Ok(rep)
}

/// Decay of `||rho(t)||_2` without flux. The fitted `nu` is the rate of the
/// norm; the squared estimate decays at `2 nu`.
fn fp_decay(
    case: &LemmaCase,
    grid: &Grid,
    drift: &VectorField,
    tg: &TimeGrid,
) -> Result<(LemmaReport, Option<f64>)> {
    let rho0 = cos_mode(grid, case.mode);
    let rho = linear_fp_forward(case.kappa, std::slice::from_ref(drift), None, &rho0, tg)?;
    let norms: Vec<f64> = rho.frames().iter().map(l2).collect();
    let times = tg.times();
    let fit = fit_decay(&times, &norms);
    let mut rep = report("fp-decay", case);
    apply_fit(&mut rep, &fit);
    let mut nu = None;
    if let Ok(f) = fit {
        let n0 = norms[0] * norms[0];
        let c = times
            .iter()
            .zip(&norms)
            .map(|(t, r)| r * r / ((-2.0 * f.rate * t).exp() * n0))
            .fold(0.0, f64::max);
        rep.constants.insert("c".into(), c);
        rep.constants.insert("nu_squared".into(), 2.0 * f.rate);
        rep.pass = f.rate > 0.0 && c.is_finite();
        nu = Some(f.rate);
    }
    Ok((rep, nu))
}

/// Both sides of the weighted estimate with a static flux, for each discount.
fn weighted_bound(
    case: &LemmaCase,
    grid: &Grid,
    drift: &VectorField,
    tg: &TimeGrid,
    nu: Option<f64>,
) -> Result<LemmaReport> {
    let mut rep = report("weighted-bound", case);
    let Some(nu) = nu else {
        rep.flagged = true;
        rep.diagnostics
            .push("no decay rate available from the flux-free run".into());
        return Ok(rep);
    };
    let rho0 = cos_mode(grid, case.mode);
    let mut comps = vec![vec![0.0; grid.len()]; grid.dim()];
    for (i, c) in comps[0].iter_mut().enumerate() {
        *c = FLUX_AMP * (TWO_PI * grid.coords(i)[0]).sin();
    }
    let flux = VectorField::from_components(*grid, comps)?;
    let rho = linear_fp_forward(
        case.kappa,
        std::slice::from_ref(drift),
        Some(std::slice::from_ref(&flux)),
        &rho0,
        tg,
    )?;
    let flux_sq = flux.l2_norm().powi(2);
    let t1 = WEIGHTED_START * tg.horizon();
    let k1 = (t1 / tg.dt()).round() as usize;
    let times = tg.times();
    let dt = tg.dt();
    let sq: Vec<f64> = rho.frames().iter().map(|f| l2(f).powi(2)).collect();
    let rho0_sq = sq[0];
    let mut worst: f64 = 0.0;
    for delta in WEIGHTED_DISCOUNTS {
        let weighted: Vec<f64> = times
            .iter()
            .zip(&sq)
            .map(|(t, r)| (-delta * t).exp() * r)
            .collect();
        let lhs = trapezoid(dt, &weighted[k1..]);
        let src: Vec<f64> = times.iter().map(|t| (-delta * t).exp() * flux_sq).collect();
        let rhs = (-delta * t1).exp() * rho0_sq * (-2.0 * nu * t1).exp() + trapezoid(dt, &src);
        let ratio = lhs / rhs;
        rep.constants.insert(format!("lhs_delta_{delta}"), lhs);
        rep.constants.insert(format!("rhs_delta_{delta}"), rhs);
        rep.constants.insert(format!("ratio_delta_{delta}"), ratio);
        worst = worst.max(ratio);
    }
    rep.constants.insert("c".into(), worst);
    rep.constants.insert("t1".into(), t1);
    if t1 >= tg.horizon() - 1.0 {
        rep.diagnostics
            .push(format!("t1 = {t1} is not below T - 1"));
    }
    rep.pass = worst.is_finite();
    Ok(rep)
}

/// `||rho||_{L1 L2} <= eps int int |V|^2 rho + C_eps (1 + 1/eps) ||rho(0)||_1`; reports the smallest `C_eps`.
fn fp_integrability(
    case: &LemmaCase,
    grid: &Grid,
    drift: &VectorField,
    tg: &TimeGrid,
) -> Result<LemmaReport> {
    let rho0 = Field::from_fn(*grid, |x| {
        1.0 + 0.5 * (TWO_PI * case.mode as f64 * x[0]).cos()
    });
    let rho = linear_fp_forward(case.kappa, std::slice::from_ref(drift), None, &rho0, tg)?;
    let mut rep = report("fp-integrability", case);
    let min = rho
        .frames()
        .iter()
        .map(|f| f.min())
        .fold(f64::INFINITY, f64::min);
    if min < -crate::kernels::POSITIVITY_TOL {
        rep.diagnostics
            .push(format!("density became negative ({min:e})"));
        rep.flagged = true;
        return Ok(rep);
    }
    let v_sq: Vec<f64> = (0..grid.len())
        .map(|i| {
            let v = drift.at(i);
            v[0] * v[0] + v[1] * v[1]
        })
        .collect();
    let vol = grid.cell_volume();
    let dt = tg.dt();
    let lp: Vec<f64> = rho.frames().iter().map(l2).collect();
    let energy: Vec<f64> = rho
        .frames()
        .iter()
        .map(|f| f.values().iter().zip(&v_sq).map(|(r, v)| vol * v * r).sum())
        .collect();
    let a = trapezoid(dt, &lp);
    let b = trapezoid(dt, &energy);
    let mass = rho0.norm(NormKind::L1);
    rep.constants.insert("rho_l1_l2".into(), a);
    rep.constants.insert("drift_energy".into(), b);
    for eps in INTEGRABILITY_EPS {
        let c = ((a - eps * b) / ((1.0 + 1.0 / eps) * mass)).max(0.0);
        rep.constants.insert(format!("c_eps_{eps}"), c);
    }
    rep.pass = a.is_finite() && b.is_finite();
    Ok(rep)
}

fn run_case(case: &LemmaCase) -> Result<Vec<LemmaReport>> {
    case.validate()?;
    let grid = Grid::new(case.n, case.dim)?;
    let tg = TimeGrid::with_step(case.horizon, case.dt)?;
    let drift = sample_drift(&grid, &case.drift)?;
    let hj = hj_decay(case, &grid, &drift, &tg)?;
    let (fp, nu) = fp_decay(case, &grid, &drift, &tg)?;
    let wb = weighted_bound(case, &grid, &drift, &tg, nu)?;
    let integ = fp_integrability(case, &grid, &drift, &tg)?;
    Ok(vec![hj, fp, wb, integ])
}

/// Four reports per case, in case order: hj-decay, fp-decay, weighted-bound, fp-integrability.
/// The weighted-bound reports also carry `c_suite`, the smallest constant valid across all cases.
pub fn lemma_decay_suite(cases: &[LemmaCase]) -> Result<Vec<LemmaReport>> {
    let per_case: Vec<Result<Vec<LemmaReport>>> = cases.par_iter().map(run_case).collect();
    let mut out = Vec::with_capacity(4 * cases.len());
    for r in per_case {
        out.extend(r?);
    }
    let c_suite = out
        .iter()
        .filter(|r| r.lemma == "weighted-bound")
        .filter_map(|r| r.constants.get("c").copied())
        .fold(0.0, f64::max);
    for r in out.iter_mut().filter(|r| r.lemma == "weighted-bound") {
        r.constants.insert("c_suite".into(), c_suite);
    }
    Ok(out)
}

/// Default case set: heat mode, constant drift and a random drift.
pub fn default_cases() -> Vec<LemmaCase> {
    vec![
        LemmaCase::heat("heat", 1.0, 128, 0.5, 1e-3),
        LemmaCase {
            drift: DriftSpec::Constant { value: vec![1.0] },
            ..LemmaCase::heat("constant-drift", 1.0, 128, 0.5, 1e-3)
        },
        LemmaCase {
            drift: DriftSpec::Random { amp: 1.0, seed: 7 },
            ..LemmaCase::heat("random-drift", 1.0, 128, 0.5, 1e-3)
        },
    ]
}

/// Path of `||rho(t)||_2` for a zero-mean cosine datum; exposed for plotting.
pub fn fp_norm_profile(case: &LemmaCase) -> Result<(Vec<f64>, Vec<f64>)> {
    case.validate()?;
    let grid = Grid::new(case.n, case.dim)?;
    let tg = TimeGrid::with_step(case.horizon, case.dt)?;
    let drift = sample_drift(&grid, &case.drift)?;
    let rho: PathField =
        linear_fp_forward(case.kappa, &[drift], None, &cos_mode(&grid, case.mode), &tg)?;
    Ok((tg.times(), rho.frames().iter().map(l2).collect()))
}
