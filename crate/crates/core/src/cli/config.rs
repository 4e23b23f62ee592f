//! Experiment plans: the versioned JSON schema and its validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::lab::lemmas::{default_cases, LemmaCase};
use crate::model::{CouplingSpec, Expr, HamiltonianSpec, TerminalSpec};
use crate::problem::MfgProblem;
use crate::solvers::{ErgodicMethod, SolverConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    SolveFinite,
    SolveErgodic,
    SolveDiscounted,
    Turnpike,
    HorizonLimit,
    VanishingDiscount,
    Commutation,
    Multiplicity,
    Lemmas,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::SolveFinite => "solve-finite",
            Action::SolveErgodic => "solve-ergodic",
            Action::SolveDiscounted => "solve-discounted",
            Action::Turnpike => "turnpike",
            Action::HorizonLimit => "horizon-limit",
            Action::VanishingDiscount => "vanishing-discount",
            Action::Commutation => "commutation",
            Action::Multiplicity => "multiplicity",
            Action::Lemmas => "lemmas",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(default = "default_dim")]
    pub d: usize,
}

fn default_dim() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub grid: GridConfig,
    pub kappa: f64,
    pub hamiltonian: HamiltonianSpec,
    #[serde(default)]
    pub coupling: CouplingSpec,
    /// Terminal cost `u_T`.
    #[serde(default)]
    pub terminal: Expr,
    /// Initial density, rescaled to unit mass.
    #[serde(default = "uniform")]
    pub m0: Expr,
}

fn uniform() -> Expr {
    Expr::constant(1.0)
}

impl ProblemConfig {
    pub fn build(&self) -> Result<MfgProblem> {
        let grid = Grid::new(self.grid.n, self.grid.d).map_err(|e| match e {
            Error::InvalidGrid(msg) if self.grid.n < crate::grid::MIN_POINTS => {
                Error::config("problem.grid.n", msg)
            }
            Error::InvalidGrid(msg) => Error::config("problem.grid.d", msg),
            other => other,
        })?;
        MfgProblem::from_expressions(
            grid,
            self.kappa,
            self.hamiltonian.clone(),
            self.coupling.clone(),
            TerminalSpec::new(self.terminal.clone()),
            &self.m0,
        )
        .map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::config("problem", msg),
            other => other,
        })
    }
}

/// Parameters of every action; each action reads the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionParams {
    pub horizon: f64,
    pub horizons: Vec<f64>,
    pub t_probe: f64,
    /// Turnpike fit window as fractions of the horizon.
    pub window: (f64, f64),
    pub delta: f64,
    pub deltas: Vec<f64>,
    pub theta_shift: f64,
    pub t_trunc: Option<f64>,
    pub probe_fraction: f64,
    pub evolution: bool,
    /// Tail tolerance of the commutation check.
    pub tol: f64,
    /// Number of random seed densities for the multiplicity probe.
    pub seeds: usize,
    pub ergodic_method: ErgodicMethod,
    pub lemma_cases: Vec<LemmaCase>,
}

impl Default for ActionParams {
    fn default() -> Self {
        ActionParams {
            horizon: 10.0,
            horizons: vec![10.0, 20.0, 40.0],
            t_probe: 2.0,
            window: crate::lab::turnpike::DEFAULT_WINDOW,
            delta: 0.1,
            deltas: vec![0.2, 0.1, 0.05, 0.025],
            theta_shift: 0.0,
            t_trunc: None,
            probe_fraction: 0.25,
            evolution: true,
            tol: 1e-3,
            seeds: 3,
            ergodic_method: ErgodicMethod::Newton,
            lemma_cases: default_cases(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub schema_version: u32,
    /// Filled from the subcommand when absent.
    #[serde(default)]
    pub action: Option<Action>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub params: ActionParams,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(
            path,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

impl ExperimentPlan {
    /// Range checks beyond what the schema expresses.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        if self.problem.grid.n < crate::grid::MIN_POINTS {
            return Err(Error::config(
                "problem.grid.n",
                format!(
                    "must be at least {}, got {}",
                    crate::grid::MIN_POINTS,
                    self.problem.grid.n
                ),
            ));
        }
        if !matches!(self.problem.grid.d, 1 | 2) {
            return Err(Error::config(
                "problem.grid.d",
                format!("must be 1 or 2, got {}", self.problem.grid.d),
            ));
        }
        positive("problem.kappa", self.problem.kappa)?;
        self.solver.validate()?;
        let p = &self.params;
        let Some(action) = self.action else {
            return Err(Error::config("action", "no action given"));
        };
        match action {
            Action::SolveFinite | Action::Turnpike | Action::Multiplicity => {
                positive("params.horizon", p.horizon)?
            }
            Action::SolveDiscounted => positive("params.delta", p.delta)?,
            Action::HorizonLimit => {
                if p.horizons.len() < 2 {
                    return Err(Error::config(
                        "params.horizons",
                        "need at least two horizons",
                    ));
                }
                for (k, t) in p.horizons.iter().enumerate() {
                    positive(&format!("params.horizons[{k}]"), *t)?;
                }
                if p.horizons.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::config("params.horizons", "must be increasing"));
                }
                if !(p.t_probe >= 0.0 && p.t_probe < 0.5 * p.horizons[0]) {
                    return Err(Error::config(
                        "params.t_probe",
                        "must lie in [0, T_min / 2)",
                    ));
                }
            }
            Action::VanishingDiscount => {
                if p.deltas.is_empty() {
                    return Err(Error::config("params.deltas", "must not be empty"));
                }
                if p.deltas.iter().any(|d| !d.is_finite())
                    || p.deltas.windows(2).any(|w| w[1] >= w[0])
                {
                    return Err(Error::config(
                        "params.deltas",
                        "must be finite and decreasing",
                    ));
                }
                if !(p.probe_fraction > 0.0 && p.probe_fraction < 1.0) {
                    return Err(Error::config("params.probe_fraction", "must lie in (0, 1)"));
                }
            }
            Action::Commutation => positive("params.tol", p.tol)?,
            Action::SolveErgodic | Action::Lemmas => {}
        }
        if matches!(action, Action::Turnpike) {
            let (a, b) = p.window;
            if !(0.0 <= a && a < b && b <= 1.0) {
                return Err(Error::config(
                    "params.window",
                    "must satisfy 0 <= a < b <= 1",
                ));
            }
        }
        if matches!(action, Action::Multiplicity) && p.seeds == 0 {
            return Err(Error::config("params.seeds", "must be at least 1"));
        }
        if let Some(t) = p.t_trunc {
            positive("params.t_trunc", t)?;
        }
        if matches!(action, Action::Lemmas) && p.lemma_cases.is_empty() {
            return Err(Error::config("params.lemma_cases", "must not be empty"));
        }
        Ok(())
    }

    pub fn action(&self) -> Action {
        self.action.unwrap_or(Action::SolveFinite)
    }
}

/// 1-based line of the first occurrence of the last key of `path` in `text`.
fn locate(text: &str, path: &str) -> Option<usize> {
    let key = path.rsplit('.').next()?.split('[').next()?;
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map(|k| k + 1)
}

fn with_line(err: Error, text: &str) -> Error {
    match err {
        Error::Config { path, message } => {
            let message = match locate(text, &path) {
                Some(line) => format!("{message} (line {line})"),
                None => message,
            };
            Error::Config { path, message }
        }
        other => other,
    }
}

/// Parses and validates a plan. `action` fills or must match the plan's action.
pub fn parse_config_str(text: &str, action: Option<Action>) -> Result<ExperimentPlan> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut plan: ExperimentPlan = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let path = if path == "." { String::new() } else { path };
        Error::config(
            path,
            format!("{inner} (line {}, column {})", inner.line(), inner.column()),
        )
    })?;
    match (plan.action, action) {
        (Some(a), Some(b)) if a != b => {
            return Err(with_line(
                Error::config(
                    "action",
                    format!("plan is for {} but {} was requested", a.name(), b.name()),
                ),
                text,
            ))
        }
        (None, b) => plan.action = b,
        _ => {}
    }
    plan.validate().map_err(|e| with_line(e, text))?;
    plan.problem.build().map_err(|e| with_line(e, text))?;
    Ok(plan)
}

pub fn parse_config(path: &Path, action: Option<Action>) -> Result<ExperimentPlan> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text, action)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "schema_version": 1,
  "problem": {
    "grid": { "n": 32 },
    "kappa": 1.0,
    "hamiltonian": { "family": "quadratic" }
  },
  "params": { "horizon": 1.0 }
}"#;

    #[test]
    fn minimal_plan_gets_defaults() {
        let plan = parse_config_str(MINIMAL, Some(Action::SolveFinite)).unwrap();
        assert_eq!(plan.action, Some(Action::SolveFinite));
        assert_eq!(plan.solver, SolverConfig::default());
        assert_eq!(plan.problem.grid.d, 1);
        assert_eq!(plan.params.deltas, vec![0.2, 0.1, 0.05, 0.025]);
    }

    #[test]
    fn coarse_grid_names_the_field() {
        let text = MINIMAL.replace("\"n\": 32", "\"n\": 3");
        match parse_config_str(&text, Some(Action::SolveFinite)) {
            Err(Error::Config { path, message }) => {
                assert!(path.ends_with("grid.n"), "{path}");
                assert!(message.contains("line 4"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_listed() {
        let text = MINIMAL.replace("\"kappa\": 1.0", "\"kappa\": 1.0, \"gamma_typo\": 2");
        let err = parse_config_str(&text, Some(Action::SolveFinite)).unwrap_err();
        assert!(err.to_string().contains("gamma_typo"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn conflicting_action() {
        let text = MINIMAL.replace(
            "\"schema_version\": 1,",
            "\"schema_version\": 1, \"action\": \"lemmas\",",
        );
        assert!(parse_config_str(&text, Some(Action::Turnpike)).is_err());
        assert!(parse_config_str(&text, None).is_ok());
    }

    #[test]
    fn wrong_version() {
        let text = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(parse_config_str(&text, Some(Action::SolveFinite)).is_err());
    }
}
