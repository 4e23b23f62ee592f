//! Exponential fits in log space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Samples at or below this value are treated as noise and skipped.
pub const NOISE_FLOOR: f64 = 1e-13;
const MIN_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FitModel {
    /// `M exp(-w t)`
    OneSided,
    /// `M0 exp(-w t) + MT exp(-w (T - t))`
    TwoSided { horizon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    /// `M`, or the prefactor at `t = 0` for the two-sided model.
    pub prefactor: f64,
    /// Prefactor at `t = T` for the two-sided model.
    pub prefactor_end: Option<f64>,
    pub rate: f64,
    /// RMS of the log residuals.
    pub residual: f64,
    pub points: usize,
}

/// Least-squares fit of `log(values)` against the chosen model.
pub fn fit_exponential(times: &[f64], values: &[f64], model: FitModel) -> Result<ExpFit> {
    if times.len() != values.len() {
        return Err(Error::Fit("times and values differ in length".into()));
    }
    let (t, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(ti, v)| ti.is_finite() && v.is_finite() && **v > NOISE_FLOOR)
        .map(|(ti, v)| (*ti, v.ln()))
        .unzip();
    if t.len() < MIN_POINTS {
        return Err(Error::Fit(format!(
            "need at least {MIN_POINTS} samples above {NOISE_FLOOR:e}, have {}",
            t.len()
        )));
    }
    match model {
        FitModel::OneSided => {
            let (a, b) = linear_ls(&t, &y)?;
            let resid = rms(t.iter().zip(&y).map(|(ti, yi)| yi - a - b * ti));
            Ok(ExpFit {
                prefactor: a.exp(),
                prefactor_end: None,
                rate: -b,
                residual: resid,
                points: t.len(),
            })
        }
        FitModel::TwoSided { horizon } => fit_two_sided(&t, &y, horizon),
    }
}

fn linear_ls(t: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|ti| (ti - tm).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(Error::Fit("sample times are all equal".into()));
    }
    let sty: f64 = t.iter().zip(y).map(|(ti, yi)| (ti - tm) * (yi - ym)).sum();
    let b = sty / stt;
    Ok((ym - b * tm, b))
}

impl ExpFit {
    /// Single constant `M` for which `M (exp(-w t) + exp(-w (T - t)))` bounds the fit.
    pub fn bound_prefactor(&self) -> f64 {
        self.prefactor.max(self.prefactor_end.unwrap_or(0.0))
    }

    pub fn eval(&self, t: f64, horizon: f64) -> f64 {
        match self.prefactor_end {
            Some(me) => {
                self.prefactor * (-self.rate * t).exp() + me * (-self.rate * (horizon - t)).exp()
            }
            None => self.prefactor * (-self.rate * t).exp(),
        }
    }
}

fn rms(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), r| (s + r * r, n + 1));
    (s / n as f64).sqrt()
}

/// `log(exp(a - w t) + exp(b - w (T - t)))` and the weight of the first term.
fn log_model(a: f64, b: f64, w: f64, t: f64, horizon: f64) -> (f64, f64) {
    let x = a - w * t;
    let y = b - w * (horizon - t);
    let hi = x.max(y);
    let (ex, ey) = ((x - hi).exp(), (y - hi).exp());
    (hi + (ex + ey).ln(), ex / (ex + ey))
}

fn sq_error(t: &[f64], y: &[f64], horizon: f64, w: f64, a: f64, b: f64) -> f64 {
    t.iter()
        .zip(y)
        .map(|(ti, yi)| (yi - log_model(a, b, w, *ti, horizon).0).powi(2))
        .sum()
}

/// Best end prefactors `(log M0, log MT)` for a fixed rate, by Gauss-Newton.
fn profile(t: &[f64], y: &[f64], horizon: f64, w: f64) -> (f64, f64, f64) {
    let side = |left: bool| {
        let vals: Vec<f64> = t
            .iter()
            .zip(y)
            .filter(|(ti, _)| (**ti <= 0.5 * horizon) == left)
            .map(|(ti, yi)| {
                if left {
                    yi + w * ti
                } else {
                    yi + w * (horizon - ti)
                }
            })
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let (mut a, mut b) = match (side(true), side(false)) {
        (Some(a), Some(b)) => (a, b),
        (Some(a), None) => (a, ymin - 50.0),
        (None, Some(b)) => (ymin - 50.0, b),
        (None, None) => (0.0, 0.0),
    };
    let mut err = sq_error(t, y, horizon, w, a, b);
    for _ in 0..100 {
        let (mut s11, mut s12, mut s22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (ti, yi) in t.iter().zip(y) {
            let (l, p) = log_model(a, b, w, *ti, horizon);
            let r = yi - l;
            s11 += p * p;
            s12 += p * (1.0 - p);
            s22 += (1.0 - p) * (1.0 - p);
            g1 += p * r;
            g2 += (1.0 - p) * r;
        }
        let ridge = 1e-12 * (s11 + s22);
        let (s11, s22) = (s11 + ridge, s22 + ridge);
        let det = s11 * s22 - s12 * s12;
        if !(det > 0.0) {
            break;
        }
        let da = (s22 * g1 - s12 * g2) / det;
        let db = (s11 * g2 - s12 * g1) / det;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let e = sq_error(t, y, horizon, w, a + step * da, b + step * db);
            if e <= err {
                improved = e < err;
                a += step * da;
                b += step * db;
                err = e;
                break;
            }
            step *= 0.5;
        }
        if !improved || (da.abs() + db.abs()) * step < 1e-14 {
            break;
        }
    }
    (a, b, (err / t.len() as f64).sqrt())
}

fn fit_two_sided(t: &[f64], y: &[f64], horizon: f64) -> Result<ExpFit> {
    if !(horizon > 0.0) {
        return Err(Error::Fit(
            "two-sided model needs a positive horizon".into(),
        ));
    }
    // starting guess from whichever half has the decay
    let half = |left: bool| -> Option<f64> {
        let (th, yh): (Vec<f64>, Vec<f64>) = t
            .iter()
            .zip(y)
            .filter(|(ti, _)| (**ti <= 0.5 * horizon) == left)
            .map(|(a, b)| (*a, *b))
            .unzip();
        if th.len() < 2 {
            return None;
        }
        let slope = linear_ls(&th, &yh).ok()?.1;
        let w = if left { -slope } else { slope };
        (w.is_finite() && w > 0.0).then_some(w)
    };
    let w0 = half(true).or_else(|| half(false)).unwrap_or(1.0 / horizon);

    // coarse log scan, then golden section on the best bracket
    let lo = (w0 * 1e-3).ln();
    let hi = (w0 * 1e3).ln();
    let samples = 241;
    let grid: Vec<f64> = (0..samples)
        .map(|k| lo + (hi - lo) * k as f64 / (samples - 1) as f64)
        .collect();
    let obj = |lw: f64| profile(t, y, horizon, lw.exp()).2;
    let vals: Vec<f64> = grid.iter().map(|&lw| obj(lw)).collect();
    let best = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(samples - 1)];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (obj(c), obj(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = obj(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = obj(d);
        }
    }
    let w = (0.5 * (a + b)).exp();
    let (la, lb, resid) = profile(t, y, horizon, w);
    Ok(ExpFit {
        prefactor: la.exp(),
        prefactor_end: Some(lb.exp()),
        rate: w,
        residual: resid,
        points: t.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn times(n: usize, horizon: f64) -> Vec<f64> {
        (0..=n).map(|k| horizon * k as f64 / n as f64).collect()
    }

    #[test]
    fn exact_one_sided() {
        let t = times(50, 4.0);
        let v: Vec<f64> = t.iter().map(|s| 3.0 * (-1.5 * s).exp()).collect();
        let f = fit_exponential(&t, &v, FitModel::OneSided).unwrap();
        assert!((f.prefactor - 3.0).abs() < 1e-9 && (f.rate - 1.5).abs() < 1e-9);
        assert!(f.residual <= 1e-9);
    }

    #[test]
    fn exact_two_sided() {
        let horizon = 10.0;
        let t = times(200, horizon);
        let v: Vec<f64> = t
            .iter()
            .map(|s| (-2.0 * s).exp() + (-2.0 * (horizon - s)).exp())
            .collect();
        let f = fit_exponential(&t, &v, FitModel::TwoSided { horizon }).unwrap();
        assert!((f.prefactor - 1.0).abs() < 1e-6, "{f:?}");
        assert!((f.prefactor_end.unwrap() - 1.0).abs() < 1e-6, "{f:?}");
        assert!((f.rate - 2.0).abs() < 1e-6, "{f:?}");
        assert!(f.residual <= 1e-9);
    }

    #[test]
    fn unequal_ends() {
        let horizon = 6.0;
        let t = times(600, horizon);
        let v: Vec<f64> = t
            .iter()
            .map(|s| 0.2 * (-3.0 * s).exp() + 5.0 * (-3.0 * (horizon - s)).exp())
            .collect();
        let f = fit_exponential(&t, &v, FitModel::TwoSided { horizon }).unwrap();
        assert!(
            (f.rate - 3.0).abs() < 1e-6 && (f.bound_prefactor() - 5.0).abs() < 1e-5,
            "{f:?}"
        );
    }

    #[test]
    fn noisy_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = times(100, 5.0);
        let v: Vec<f64> = t
            .iter()
            .map(|s| 2.0 * (-0.8 * s).exp() * (1.0 + rng.gen_range(-0.01..0.01)))
            .collect();
        let f = fit_exponential(&t, &v, FitModel::OneSided).unwrap();
        assert!((f.rate - 0.8).abs() / 0.8 < 0.05);
    }

    #[test]
    fn too_few_points() {
        let t = times(20, 1.0);
        let v: Vec<f64> = t.iter().map(|s| if *s < 0.2 { 1.0 } else { 0.0 }).collect();
        assert!(matches!(
            fit_exponential(&t, &v, FitModel::OneSided),
            Err(Error::Fit(_))
        ));
    }
}
