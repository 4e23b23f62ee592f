use serde::{Deserialize, Serialize};

use super::fit::{fit_exponential, ExpFit, FitModel, NOISE_FLOOR};
use crate::error::{Error, Result};
use crate::grid::{gradient, Field};
use crate::kernels::PathField;
use crate::solvers::{ErgodicSolution, FiniteHorizonSolution};

/// Samples below this fraction of the profile peak are treated as solver noise.
pub const RELATIVE_FLOOR: f64 = 1e-8;
/// Profiles whose peak stays below this are reported as already stationary.
pub const STATIONARY_FLOOR: f64 = 1e-8;
/// Largest RMS log residual for which a rate is reported.
pub const FIT_RESIDUAL_MAX: f64 = 0.1;
/// Default fit window, as fractions of the horizon.
pub const DEFAULT_WINDOW: (f64, f64) = (0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnpikeReport {
    pub horizon: f64,
    pub times: Vec<f64>,
    /// `|m(t) - m_bar|_sup + |Du(t) - Du_bar|_sup`
    pub distances: Vec<f64>,
    /// Fitted model evaluated at every time, when a fit exists.
    pub model: Vec<f64>,
    pub window: (f64, f64),
    /// Noise floor used to select samples.
    pub floor: f64,
    pub fit: Option<ExpFit>,
    /// Fit obtained but rejected because the residual is too large.
    pub rejected_fit: Option<ExpFit>,
    pub degenerate: bool,
}

impl TurnpikeReport {
    pub fn rate(&self) -> Option<f64> {
        self.fit.map(|f| f.rate)
    }

    /// Distance at the frame nearest to `t`.
    pub fn distance_at(&self, t: f64) -> f64 {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        self.distances[k]
    }
}

/// `max(NOISE_FLOOR, RELATIVE_FLOOR * max(profile))`.
pub fn decay_floor(profile: &[f64]) -> f64 {
    let peak = profile.iter().cloned().fold(0.0, f64::max);
    (RELATIVE_FLOOR * peak).max(NOISE_FLOOR)
}

/// Distance of each frame of `(u, m)` to the stationary pair.
pub fn turnpike_profile(
    u: &PathField,
    m: &PathField,
    u_bar: &Field,
    m_bar: &Field,
) -> Result<Vec<f64>> {
    let du_bar = gradient(u_bar);
    u.frames()
        .iter()
        .zip(m.frames())
        .map(|(uf, mf)| Ok(mf.distance_sup(m_bar)? + gradient(uf).sub(&du_bar)?.sup_magnitude()))
        .collect()
}

pub fn turnpike_report(
    sol: &FiniteHorizonSolution,
    erg: &ErgodicSolution,
    window: Option<(f64, f64)>,
) -> Result<TurnpikeReport> {
    if sol.u_path.grid() != erg.u.grid() {
        return Err(Error::GridMismatch);
    }
    let window = window.unwrap_or(DEFAULT_WINDOW);
    if !(0.0 <= window.0 && window.0 < window.1 && window.1 <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fit window {window:?} must satisfy 0 <= a < b <= 1"
        )));
    }
    let tg = sol.time_grid();
    let horizon = tg.horizon();
    let times = tg.times();
    let distances = turnpike_profile(&sol.u_path, &sol.m_path, &erg.u, &erg.m)?;
    report_from_profile(horizon, times, distances, window)
}

/// Fits the two-sided model to a given profile.
pub fn report_from_profile(
    horizon: f64,
    times: Vec<f64>,
    distances: Vec<f64>,
    window: (f64, f64),
) -> Result<TurnpikeReport> {
    if times.len() != distances.len() {
        return Err(Error::InvalidArgument(
            "profile and times differ in length".into(),
        ));
    }
    let floor = decay_floor(&distances);
    let peak = distances.iter().cloned().fold(0.0, f64::max);
    let mut report = TurnpikeReport {
        horizon,
        model: Vec::new(),
        window,
        floor,
        fit: None,
        rejected_fit: None,
        degenerate: peak <= STATIONARY_FLOOR,
        times,
        distances,
    };
    if report.degenerate {
        return Ok(report);
    }
    let (lo, hi) = (window.0 * horizon, window.1 * horizon);
    let (t, d): (Vec<f64>, Vec<f64>) = report
        .times
        .iter()
        .zip(&report.distances)
        .filter(|(t, d)| **t >= lo - 1e-12 && **t <= hi + 1e-12 && **d > floor)
        .map(|(t, d)| (*t, *d))
        .unzip();
    match fit_exponential(&t, &d, FitModel::TwoSided { horizon }) {
        Ok(fit) => {
            report.model = report.times.iter().map(|s| fit.eval(*s, horizon)).collect();
            if fit.residual <= FIT_RESIDUAL_MAX && fit.rate > 0.0 {
                report.fit = Some(fit);
            } else {
                report.rejected_fit = Some(fit);
            }
        }
        Err(Error::Fit(_)) => {}
        Err(e) => return Err(e),
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_profile() {
        let horizon = 8.0;
        let times: Vec<f64> = (0..=800).map(|k| k as f64 * 0.01).collect();
        let d: Vec<f64> = times
            .iter()
            .map(|t| (-2.0 * t).exp() + (-2.0 * (horizon - t)).exp())
            .collect();
        let r = report_from_profile(horizon, times, d, DEFAULT_WINDOW).unwrap();
        let f = r.fit.unwrap();
        assert!((f.rate - 2.0).abs() < 1e-6 && (f.bound_prefactor() - 1.0).abs() < 1e-6);
        assert!(!r.degenerate);
    }

    #[test]
    fn flat_profile_is_degenerate() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let r = report_from_profile(1.0, times, vec![1e-12; 101], DEFAULT_WINDOW).unwrap();
        assert!(r.degenerate && r.fit.is_none());
    }
}
