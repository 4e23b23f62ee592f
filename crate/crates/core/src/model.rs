//! Closed-form Hamiltonian and coupling families, plus the small spatial
//! expression grammar used for potentials, base costs, terminal data and
//! initial densities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Density floor below which `F_m` is not evaluated for sub-linear powers.
pub const DENSITY_FLOOR: f64 = 1e-8;

/// Number of density samples in the monotonicity-margin search.
pub const MARGIN_SAMPLES: usize = 1024;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// One term of a spatial expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Term {
    Const {
        value: f64,
    },
    /// `amp * sin(2 pi k x_axis)`
    Sin {
        amp: f64,
        k: u32,
        #[serde(default)]
        axis: usize,
    },
    /// `amp * cos(2 pi k x_axis)`
    Cos {
        amp: f64,
        k: u32,
        #[serde(default)]
        axis: usize,
    },
    /// Periodically wrapped Gaussian bump.
    Gauss {
        amp: f64,
        center: Vec<f64>,
        width: f64,
    },
}

/// Affine combination of [`Term`]s; the empty expression is zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Expr(pub Vec<Term>);

impl Expr {
    pub fn zero() -> Self {
        Expr(Vec::new())
    }

    pub fn constant(value: f64) -> Self {
        Expr(vec![Term::Const { value }])
    }

    pub fn with(mut self, term: Term) -> Self {
        self.0.push(term);
        self
    }

    pub fn terms(&self) -> &[Term] {
        &self.0
    }

    pub fn validate(&self, dim: usize) -> std::result::Result<(), String> {
        for (i, t) in self.0.iter().enumerate() {
            match t {
                Term::Const { value } if !value.is_finite() => {
                    return Err(format!("term {i}: constant is not finite"))
                }
                Term::Sin { amp, axis, .. } | Term::Cos { amp, axis, .. } => {
                    if !amp.is_finite() {
                        return Err(format!("term {i}: amplitude is not finite"));
                    }
                    if *axis >= dim {
                        return Err(format!("term {i}: axis {axis} out of range for d = {dim}"));
                    }
                }
                Term::Gauss { amp, center, width } => {
                    if !amp.is_finite() {
                        return Err(format!("term {i}: amplitude is not finite"));
                    }
                    if center.len() != dim {
                        return Err(format!("term {i}: center must have {dim} coordinates"));
                    }
                    if !(*width > 0.0) {
                        return Err(format!("term {i}: width must be positive"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: [f64; 2], dim: usize) -> f64 {
        self.0.iter().map(|t| eval_term(t, x, dim)).sum()
    }

    pub fn sample(&self, grid: &Grid) -> Field {
        let d = grid.dim();
        Field::from_fn(*grid, |x| self.eval(x, d))
    }
}

fn eval_term(t: &Term, x: [f64; 2], dim: usize) -> f64 {
    match t {
        Term::Const { value } => *value,
        Term::Sin { amp, k, axis } => amp * (TWO_PI * *k as f64 * x[*axis]).sin(),
        Term::Cos { amp, k, axis } => amp * (TWO_PI * *k as f64 * x[*axis]).cos(),
        Term::Gauss { amp, center, width } => {
            let w2 = 2.0 * width * width;
            let mut total = 0.0;
            // wrap by summing the nearest periodic images
            let shifts: &[f64] = &[-1.0, 0.0, 1.0];
            if dim == 1 {
                for s in shifts {
                    let dx = x[0] - center[0] - s;
                    total += (-dx * dx / w2).exp();
                }
            } else {
                for sx in shifts {
                    for sy in shifts {
                        let dx = x[0] - center[0] - sx;
                        let dy = x[1] - center[1] - sy;
                        total += (-(dx * dx + dy * dy) / w2).exp();
                    }
                }
            }
            amp * total
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HamiltonianFamily {
    /// `|p|^2 / 2`
    Quadratic,
    /// `sqrt(1 + |p|^2) - 1`
    LipschitzConvex,
    /// `|p|^2 / 2 + V(x)`
    QuadraticWithPotential,
    /// `H = 0`; pure diffusion, for kernel checks.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub family: HamiltonianFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<Expr>,
}

/// `H`, `H_p` and `H_pp` at one point; entries beyond `dim` are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianEval {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityBounds {
    /// `L_K = sup |H_p|` over `|p| <= K`
    pub lipschitz: f64,
    /// `alpha_K`, smallest eigenvalue of `H_pp`
    pub alpha: f64,
    /// `beta_K`, largest eigenvalue of `H_pp`
    pub beta: f64,
}

impl HamiltonianSpec {
    pub fn new(family: HamiltonianFamily) -> Self {
        HamiltonianSpec {
            family,
            potential: None,
        }
    }

    pub fn with_potential(family: HamiltonianFamily, potential: Expr) -> Self {
        HamiltonianSpec {
            family,
            potential: Some(potential),
        }
    }

    /// Every family is radial in `p`: `H = g(|p|^2) + V(x)`. Returns
    /// `(g, g', g'')` at `s = |p|^2`.
    pub fn radial_profile(&self, s: f64) -> (f64, f64, f64) {
        match self.family {
            HamiltonianFamily::Quadratic | HamiltonianFamily::QuadraticWithPotential => {
                (0.5 * s, 0.5, 0.0)
            }
            HamiltonianFamily::LipschitzConvex => {
                let r = (1.0 + s).sqrt();
                (r - 1.0, 0.5 / r, -0.25 / (r * r * r))
            }
            HamiltonianFamily::Zero => (0.0, 0.0, 0.0),
        }
    }

    pub fn potential_at(&self, x: [f64; 2], dim: usize) -> f64 {
        match (&self.family, &self.potential) {
            (HamiltonianFamily::QuadraticWithPotential, Some(v)) => v.eval(x, dim),
            _ => 0.0,
        }
    }

    pub fn sample_potential(&self, grid: &Grid) -> Field {
        let d = grid.dim();
        Field::from_fn(*grid, |x| self.potential_at(x, d))
    }

    /// Upper bound on `|H_p|` over `|p| <= k`, used by the CFL guard.
    pub fn max_slope(&self, k: f64) -> f64 {
        convexity_bounds(self, k).lipschitz
    }
}

pub fn eval_hamiltonian(spec: &HamiltonianSpec, x: [f64; 2], p: &[f64]) -> HamiltonianEval {
    let dim = p.len();
    let s: f64 = p.iter().map(|v| v * v).sum();
    let (g, g1, g2) = spec.radial_profile(s);
    let mut grad = [0.0; 2];
    let mut hess = [[0.0; 2]; 2];
    for a in 0..dim {
        grad[a] = 2.0 * g1 * p[a];
        for b in 0..dim {
            hess[a][b] = 4.0 * g2 * p[a] * p[b] + if a == b { 2.0 * g1 } else { 0.0 };
        }
    }
    HamiltonianEval {
        value: g + spec.potential_at(x, dim),
        grad,
        hess,
    }
}

pub fn convexity_bounds(spec: &HamiltonianSpec, k: f64) -> ConvexityBounds {
    match spec.family {
        HamiltonianFamily::Quadratic | HamiltonianFamily::QuadraticWithPotential => {
            ConvexityBounds {
                lipschitz: k,
                alpha: 1.0,
                beta: 1.0,
            }
        }
        HamiltonianFamily::LipschitzConvex => ConvexityBounds {
            lipschitz: k / (1.0 + k * k).sqrt(),
            alpha: (1.0 + k * k).powf(-1.5),
            beta: 1.0,
        },
        HamiltonianFamily::Zero => ConvexityBounds {
            lipschitz: 0.0,
            alpha: 0.0,
            beta: 0.0,
        },
    }
}

/// `F(x, m) = f0(x) + slope * m - anti * m^power`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    #[serde(default)]
    pub base: Expr,
    #[serde(default)]
    pub slope: f64,
    #[serde(default)]
    pub anti: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default)]
    pub cap: f64,
}

fn default_power() -> f64 {
    1.0
}

impl Default for CouplingSpec {
    fn default() -> Self {
        CouplingSpec {
            base: Expr::zero(),
            slope: 0.0,
            anti: 0.0,
            power: 1.0,
            cap: 0.0,
        }
    }
}

impl CouplingSpec {
    pub fn validate(&self, dim: usize) -> std::result::Result<(), (String, String)> {
        self.base
            .validate(dim)
            .map_err(|e| ("base".to_string(), e))?;
        if !(self.slope >= 0.0) {
            return Err(("slope".into(), "must be >= 0".into()));
        }
        if !(self.anti >= 0.0) {
            return Err(("anti".into(), "must be >= 0".into()));
        }
        if !(self.power > 0.0) {
            return Err(("power".into(), "must be > 0".into()));
        }
        if !(self.cap >= 0.0) {
            return Err(("cap".into(), "must be >= 0".into()));
        }
        Ok(())
    }

    /// `F` given the sampled base value; negative roundoff in `m` is clamped.
    #[inline]
    pub fn value_with_base(&self, base: f64, m: f64) -> f64 {
        let m = m.max(0.0);
        base + self.slope * m - self.anti * m.powf(self.power)
    }

    /// `F_m`; for powers below one the density is floored at [`DENSITY_FLOOR`].
    #[inline]
    pub fn derivative(&self, m: f64) -> f64 {
        let m = if self.power < 1.0 {
            m.max(DENSITY_FLOOR)
        } else {
            m.max(0.0)
        };
        self.slope - self.anti * self.power * m.powf(self.power - 1.0)
    }

    pub fn sample_base(&self, grid: &Grid) -> Field {
        self.base.sample(grid)
    }

    /// Checks `-cap * m^power <= F <= 0` on the grid for densities in `[0, m_bound]`.
    pub fn satisfies_growth_bound(&self, grid: &Grid, m_bound: f64) -> bool {
        let base = self.sample_base(grid);
        (0..MARGIN_SAMPLES).all(|j| {
            let m = m_bound * j as f64 / (MARGIN_SAMPLES - 1) as f64;
            base.values().iter().all(|&b| {
                let f = self.value_with_base(b, m);
                f <= 1e-14 && f >= -self.cap * m.powf(self.power) - 1e-14
            })
        })
    }
}

pub fn eval_coupling(spec: &CouplingSpec, x: [f64; 2], dim: usize, m: f64) -> Result<(f64, f64)> {
    if !(m >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "density must be nonnegative, got {m}"
        )));
    }
    let base = spec.base.eval(x, dim);
    Ok((spec.value_with_base(base, m), spec.derivative(m)))
}

/// Smallest `gamma` making `F(x, m) + gamma m` nondecreasing on
/// `[lower, m_bound]`, found by dense search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityMargin {
    pub gamma_star: f64,
    /// Lower end of the density interval actually searched.
    pub lower: f64,
    pub upper: f64,
}

pub fn monotonicity_margin(
    spec: &CouplingSpec,
    grid: &Grid,
    m_bound: f64,
) -> Result<MonotonicityMargin> {
    if !(m_bound > 0.0) {
        return Err(Error::InvalidArgument(
            "density bound must be positive".into(),
        ));
    }
    let lower = DENSITY_FLOOR.min(m_bound);
    let d = grid.dim();
    let mut inf = f64::INFINITY;
    for j in 0..MARGIN_SAMPLES {
        let m = lower + (m_bound - lower) * j as f64 / (MARGIN_SAMPLES - 1) as f64;
        for i in 0..grid.len() {
            let (_, fm) = eval_coupling(spec, grid.coords(i), d, m)?;
            inf = inf.min(fm);
        }
    }
    Ok(MonotonicityMargin {
        gamma_star: (-inf).max(0.0),
        lower,
        upper: m_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    #[serde(default)]
    pub u_t: Expr,
}

impl TerminalSpec {
    pub fn new(u_t: Expr) -> Self {
        TerminalSpec { u_t }
    }

    pub fn sample(&self, grid: &Grid) -> Field {
        self.u_t.sample(grid)
    }
}
