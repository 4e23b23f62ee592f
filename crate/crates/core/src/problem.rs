use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::model::{CouplingSpec, Expr, HamiltonianSpec, TerminalSpec};
use crate::upwind::UpwindHamiltonian;

/// Mass tolerance for probability densities.
pub const MASS_TOL: f64 = 1e-12;

/// A mean field game on the torus: diffusion, Hamiltonian, coupling,
/// terminal cost and initial density, with the sampled data cached.
#[derive(Debug, Clone)]
pub struct MfgProblem {
    grid: Grid,
    kappa: f64,
    hamiltonian: HamiltonianSpec,
    coupling: CouplingSpec,
    terminal: TerminalSpec,
    m0: Field,
    upwind: UpwindHamiltonian,
    base: Vec<f64>,
    u_t: Field,
}

impl MfgProblem {
    pub fn new(
        kappa: f64,
        hamiltonian: HamiltonianSpec,
        coupling: CouplingSpec,
        terminal: TerminalSpec,
        m0: Field,
    ) -> Result<Self> {
        let grid = *m0.grid();
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "diffusion must be positive, got {kappa}"
            )));
        }
        if let Err((field, msg)) = coupling.validate(grid.dim()) {
            return Err(Error::InvalidArgument(format!("coupling.{field}: {msg}")));
        }
        terminal
            .u_t
            .validate(grid.dim())
            .map_err(|e| Error::InvalidArgument(format!("terminal: {e}")))?;
        if let Some(v) = &hamiltonian.potential {
            v.validate(grid.dim())
                .map_err(|e| Error::InvalidArgument(format!("potential: {e}")))?;
        }
        check_density(&m0)?;
        let upwind = UpwindHamiltonian::new(&hamiltonian, grid);
        let base = coupling.sample_base(&grid).into_values();
        let u_t = terminal.sample(&grid);
        Ok(MfgProblem {
            grid,
            kappa,
            hamiltonian,
            coupling,
            terminal,
            m0,
            upwind,
            base,
            u_t,
        })
    }

    /// Samples `m0` on the grid and rescales it to unit mass.
    pub fn from_expressions(
        grid: Grid,
        kappa: f64,
        hamiltonian: HamiltonianSpec,
        coupling: CouplingSpec,
        terminal: TerminalSpec,
        m0: &Expr,
    ) -> Result<Self> {
        m0.validate(grid.dim())
            .map_err(|e| Error::InvalidArgument(format!("m0: {e}")))?;
        let m0 = normalize_density(m0.sample(&grid))?;
        Self::new(kappa, hamiltonian, coupling, terminal, m0)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        &self.hamiltonian
    }

    pub fn coupling(&self) -> &CouplingSpec {
        &self.coupling
    }

    pub fn terminal(&self) -> &TerminalSpec {
        &self.terminal
    }

    pub fn m0(&self) -> &Field {
        &self.m0
    }

    pub fn terminal_field(&self) -> &Field {
        &self.u_t
    }

    pub fn upwind(&self) -> &UpwindHamiltonian {
        &self.upwind
    }

    pub fn with_m0(&self, m0: Field) -> Result<Self> {
        if m0.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        check_density(&m0)?;
        let mut p = self.clone();
        p.m0 = m0;
        Ok(p)
    }

    pub fn with_terminal_field(&self, u_t: Field) -> Result<Self> {
        if u_t.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let mut p = self.clone();
        p.u_t = u_t;
        Ok(p)
    }

    pub fn with_coupling(&self, coupling: CouplingSpec) -> Result<Self> {
        Self::new(
            self.kappa,
            self.hamiltonian.clone(),
            coupling,
            self.terminal.clone(),
            self.m0.clone(),
        )
        .map(|mut p| {
            p.u_t = self.u_t.clone();
            p
        })
    }

    /// Same problem on another grid, with `m0` and `u_T` resampled from
    /// the given expressions.
    pub fn regrid(&self, grid: Grid, m0: &Expr) -> Result<Self> {
        Self::from_expressions(
            grid,
            self.kappa,
            self.hamiltonian.clone(),
            self.coupling.clone(),
            self.terminal.clone(),
            m0,
        )
    }

    pub fn coupling_values(&self, m: &[f64]) -> Vec<f64> {
        self.base
            .iter()
            .zip(m)
            .map(|(&b, &mi)| self.coupling.value_with_base(b, mi))
            .collect()
    }

    pub fn coupling_derivatives(&self, m: &[f64]) -> Vec<f64> {
        m.iter().map(|&mi| self.coupling.derivative(mi)).collect()
    }
}

pub(crate) fn check_density(m: &Field) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument("density is not finite".into()));
    }
    if m.min() < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "density must be nonnegative (min {})",
            m.min()
        )));
    }
    let mass = m.integrate();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidArgument(format!(
            "density must have unit mass (got {mass})"
        )));
    }
    Ok(())
}

/// Rescales a nonnegative field to unit mass.
pub fn normalize_density(m: Field) -> Result<Field> {
    if !m.is_finite() || m.min() < 0.0 {
        return Err(Error::InvalidArgument(
            "density expression must be finite and nonnegative on the grid".into(),
        ));
    }
    let mass = m.integrate();
    if !(mass > 0.0) {
        return Err(Error::InvalidArgument(
            "density expression has zero mass".into(),
        ));
    }
    Ok(m.scale(1.0 / mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HamiltonianFamily, Term};

    #[test]
    fn rejects_bad_inputs() {
        let g = Grid::new(16, 1).unwrap();
        let h = HamiltonianSpec::new(HamiltonianFamily::Quadratic);
        let one = Field::constant(g, 1.0);
        assert!(MfgProblem::new(
            0.0,
            h.clone(),
            CouplingSpec::default(),
            TerminalSpec::default(),
            one.clone()
        )
        .is_err());
        let twice = Field::constant(g, 2.0);
        assert!(MfgProblem::new(
            1.0,
            h.clone(),
            CouplingSpec::default(),
            TerminalSpec::default(),
            twice
        )
        .is_err());
        let neg = Field::from_fn(g, |x| 1.0 + 2.0 * (6.0 * x[0]).cos());
        assert!(MfgProblem::from_expressions(
            g,
            1.0,
            h,
            CouplingSpec::default(),
            TerminalSpec::default(),
            &Expr::constant(1.0).with(Term::Cos {
                amp: 2.0,
                k: 1,
                axis: 0
            })
        )
        .is_err());
        assert!(normalize_density(neg).is_err());
    }

    #[test]
    fn expressions_are_normalized() {
        let g = Grid::new(32, 1).unwrap();
        let p = MfgProblem::from_expressions(
            g,
            1.0,
            HamiltonianSpec::new(HamiltonianFamily::Quadratic),
            CouplingSpec::default(),
            TerminalSpec::default(),
            &Expr::constant(3.0).with(Term::Cos {
                amp: 1.0,
                k: 1,
                axis: 0,
            }),
        )
        .unwrap();
        assert!((p.m0().integrate() - 1.0).abs() < 1e-14);
    }
}
