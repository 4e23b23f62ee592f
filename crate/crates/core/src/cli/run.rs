//! Plan execution, output emission and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Action, ExperimentPlan, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::lab::lemmas::lemma_decay_suite;
use crate::lab::report::{LemmaReport, StudyReport};
use crate::lab::studies::{
    commutation_check, horizon_limit_study, multiplicity_probe, random_densities,
    vanishing_discount_study, VanishingDiscountOptions,
};
use crate::lab::turnpike::{turnpike_report, TurnpikeReport};
use crate::problem::MfgProblem;
use crate::solvers::{
    finite_horizon_residuals, solve_discounted_stationary, solve_ergodic, solve_finite_horizon,
    solve_theta, ErgodicMethod, PathResiduals,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    pub format: OutputFormat,
    /// Worker threads for sweep rows; the rayon default when absent.
    pub jobs: Option<usize>,
}

/// Schema-versioned wrapper of every JSON payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub kind: String,
    pub data: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(kind: &str, data: T) -> Self {
        Envelope {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            data,
        }
    }
}

/// Reads back a JSON payload written by [`run_plan`].
pub fn read_envelope<T: DeserializeOwned>(path: &Path) -> Result<Envelope<T>> {
    let text = std::fs::read_to_string(path)?;
    let env: Envelope<T> = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    if env.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidArgument(format!(
            "{}: unsupported schema version {}",
            path.display(),
            env.schema_version
        )));
    }
    Ok(env)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(Option<f64>),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(Some(v))
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::Num(v)
    }
}

fn verdict_cell(v: Option<bool>) -> Cell {
    Cell::Text(match v {
        Some(true) => "pass".into(),
        Some(false) => "fail".into(),
        None => String::new(),
    })
}

/// Plot-ready table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Series {
    fn new(name: &str, columns: &[&str]) -> Self {
        Series {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Header then one line per row; numbers carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            for (k, cell) in row.iter().enumerate() {
                if k > 0 {
                    s.push(',');
                }
                match cell {
                    Cell::Num(Some(v)) => {
                        let _ = write!(s, "{v:.16e}");
                    }
                    Cell::Num(None) => {}
                    Cell::Text(t) => s.push_str(t),
                }
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowFailure {
    pub parameter: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub version: String,
    pub action: Action,
    pub plan_sha256: String,
    pub seed: u64,
    pub format: OutputFormat,
    pub exit_code: i32,
    pub error: Option<String>,
    pub failures: Vec<RowFailure>,
    pub timings: Vec<StageTiming>,
    /// Every emitted file except the manifest itself.
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.exit_code == 0
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Single writer stage: every file goes through here so the inventory stays complete.
struct Writer {
    dir: PathBuf,
    format: OutputFormat,
    files: Vec<FileRecord>,
}

impl Writer {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.push(FileRecord {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, kind: &str, data: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(&Envelope::new(kind, data))
            .map_err(|e| Error::InvalidArgument(format!("serializing {name}: {e}")))?;
        self.write(name, text.as_bytes())
    }

    fn series(&mut self, s: &Series) -> Result<()> {
        match self.format {
            OutputFormat::Csv => self.write(&format!("{}.csv", s.name), s.to_csv().as_bytes()),
            OutputFormat::Json => self.json(&format!("{}.json", s.name), "series", s),
        }
    }
}

/// What an action hands to the writer.
#[derive(Default)]
struct Outputs {
    report: Option<(String, serde_json::Value)>,
    series: Vec<Series>,
    failures: Vec<RowFailure>,
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::InvalidArgument(format!("serializing report: {e}")))
}

fn coord_columns(grid: &Grid) -> Vec<&'static str> {
    if grid.dim() == 1 {
        vec!["x"]
    } else {
        vec!["x", "y"]
    }
}

fn field_series(name: &str, fields: &[(&str, &Field)]) -> Series {
    let grid = *fields[0].1.grid();
    let mut cols = coord_columns(&grid);
    cols.extend(fields.iter().map(|(c, _)| *c));
    let mut s = Series::new(name, &cols);
    for i in 0..grid.len() {
        let x = grid.coords(i);
        let mut row: Vec<Cell> = x[..grid.dim()].iter().map(|v| Cell::from(*v)).collect();
        row.extend(fields.iter().map(|(_, f)| Cell::from(f.values()[i])));
        s.rows.push(row);
    }
    s
}

fn study_series(name: &str, report: &StudyReport, columns: &[&str], verdict: bool) -> Series {
    let mut cols = vec![report.parameter.as_str()];
    cols.extend_from_slice(columns);
    if verdict {
        cols.push("verdict");
    }
    let mut s = Series::new(name, &cols);
    let idx: Vec<Option<usize>> = columns.iter().map(|c| report.column(c)).collect();
    for row in &report.rows {
        let mut cells = vec![Cell::from(row.parameter)];
        cells.extend(
            idx.iter()
                .map(|k| Cell::from(k.and_then(|k| row.metric(k)))),
        );
        if verdict {
            cells.push(verdict_cell(row.verdict));
        }
        s.rows.push(cells);
    }
    s
}

fn study_failures(report: &StudyReport) -> Vec<RowFailure> {
    report
        .rows
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| RowFailure {
                parameter: r.parameter,
                error: e.clone(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct FiniteSummary {
    horizon: f64,
    iterations: usize,
    residual: f64,
    density_bound: f64,
    gradient_bound: f64,
    residuals: PathResiduals,
    history: Vec<f64>,
}

#[derive(Serialize)]
struct ErgodicSummary {
    lambda: f64,
    method: ErgodicMethod,
    iterations: usize,
    hjb_residual: f64,
    fp_residual: f64,
}

#[derive(Serialize)]
struct DiscountedSummary {
    delta: f64,
    iterations: usize,
    hjb_residual: f64,
    fp_residual: f64,
}

#[derive(Serialize)]
struct TurnpikeOutput<'a> {
    lambda: f64,
    iterations: usize,
    report: &'a TurnpikeReport,
}

fn execute(plan: &ExperimentPlan, problem: &MfgProblem) -> Result<Outputs> {
    let p = &plan.params;
    let cfg = &plan.solver;
    let mut out = Outputs::default();
    match plan.action() {
        Action::SolveFinite => {
            let sol = solve_finite_horizon(problem, p.horizon, cfg)?;
            let residuals = finite_horizon_residuals(problem, &sol)?;
            out.series.push(field_series(
                "profile",
                &[
                    ("u_0", sol.u_path.first()),
                    ("m_0", sol.m_path.first()),
                    ("u_T", sol.u_path.last()),
                    ("m_T", sol.m_path.last()),
                ],
            ));
            let mut conv = Series::new("convergence", &["iteration", "residual"]);
            for (k, r) in sol.history.iter().enumerate() {
                conv.rows
                    .push(vec![Cell::from((k + 1) as f64), Cell::from(*r)]);
            }
            out.series.push(conv);
            let summary = FiniteSummary {
                horizon: p.horizon,
                iterations: sol.iterations,
                residual: sol.residual,
                density_bound: sol.density_bound,
                gradient_bound: sol.gradient_bound,
                residuals,
                history: sol.history.clone(),
            };
            out.report = Some(("finite-horizon".into(), to_value(&summary)?));
        }
        Action::SolveErgodic => {
            let erg = solve_ergodic(problem, p.ergodic_method, cfg)?;
            out.series.push(field_series(
                "ergodic",
                &[("u_bar", &erg.u), ("m_bar", &erg.m)],
            ));
            let summary = ErgodicSummary {
                lambda: erg.lambda,
                method: erg.method,
                iterations: erg.iterations,
                hjb_residual: erg.hjb_residual,
                fp_residual: erg.fp_residual,
            };
            out.report = Some(("ergodic".into(), to_value(&summary)?));
        }
        Action::SolveDiscounted => {
            let ds = solve_discounted_stationary(problem, p.delta, cfg)?;
            out.series.push(field_series(
                "discounted",
                &[("u_delta", &ds.u), ("m_delta", &ds.m)],
            ));
            let summary = DiscountedSummary {
                delta: ds.delta,
                iterations: ds.iterations,
                hjb_residual: ds.hjb_residual,
                fp_residual: ds.fp_residual,
            };
            out.report = Some(("discounted".into(), to_value(&summary)?));
        }
        Action::Turnpike => {
            let erg = solve_ergodic(problem, ErgodicMethod::Newton, cfg)?;
            let sol = solve_finite_horizon(problem, p.horizon, cfg)?;
            let rep = turnpike_report(&sol, &erg, Some(p.window))?;
            let mut s = Series::new("turnpike", &["t", "d", "model_d"]);
            for (k, (t, d)) in rep.times.iter().zip(&rep.distances).enumerate() {
                s.rows.push(vec![
                    Cell::from(*t),
                    Cell::from(*d),
                    Cell::from(rep.model.get(k).copied()),
                ]);
            }
            out.series.push(s);
            let payload = TurnpikeOutput {
                lambda: erg.lambda,
                iterations: sol.iterations,
                report: &rep,
            };
            out.report = Some(("turnpike".into(), to_value(&payload)?));
        }
        Action::HorizonLimit => {
            let rep = horizon_limit_study(problem, &p.horizons, p.t_probe, cfg)?;
            out.series.push(study_series(
                "horizon_limit",
                &rep,
                &["bound", "delta_u", "delta_m", "ratio"],
                true,
            ));
            out.failures = study_failures(&rep);
            out.report = Some(("study".into(), to_value(&rep)?));
        }
        Action::VanishingDiscount => {
            let opts = VanishingDiscountOptions {
                theta_shift: p.theta_shift,
                t_trunc: p.t_trunc,
                probe_fraction: p.probe_fraction,
                evolution: p.evolution,
            };
            let rep = vanishing_discount_study(problem, &p.deltas, &opts, cfg)?;
            out.series.push(study_series(
                "vanishing_discount",
                &rep,
                &["e_delta", "ratio"],
                true,
            ));
            if p.evolution {
                out.series.push(study_series(
                    "evolution_gap",
                    &rep,
                    &["evolution_gap"],
                    false,
                ));
            }
            out.failures = study_failures(&rep);
            out.report = Some(("study".into(), to_value(&rep)?));
        }
        Action::Commutation => {
            let erg = solve_ergodic(problem, ErgodicMethod::Newton, cfg)?;
            let theta = solve_theta(problem, &erg, cfg)?;
            let rep = commutation_check(problem, &erg, &theta, p.t_trunc, p.tol, cfg)?;
            out.series.push(study_series(
                "commutation",
                &rep,
                &["v_gap", "mu_gap", "average"],
                false,
            ));
            out.report = Some(("study".into(), to_value(&rep)?));
        }
        Action::Multiplicity => {
            let seeds = random_densities(problem.grid(), p.seeds, plan.seed)?;
            let rep = multiplicity_probe(problem, p.horizon, &seeds, cfg)?;
            out.series.push(study_series(
                "multiplicity",
                &rep,
                &["iterations", "residual", "cluster", "distance_to_first"],
                false,
            ));
            // failures are data here: recorded in the report, not in the exit status
            out.report = Some(("study".into(), to_value(&rep)?));
        }
        Action::Lemmas => {
            let reps: Vec<LemmaReport> = lemma_decay_suite(&p.lemma_cases)?;
            let mut s = Series::new(
                "lemmas",
                &["lemma", "case", "pass", "flagged", "constant", "value"],
            );
            for r in &reps {
                for (key, value) in &r.constants {
                    s.rows.push(vec![
                        Cell::Text(r.lemma.clone()),
                        Cell::Text(r.case.clone()),
                        Cell::Text(r.pass.to_string()),
                        Cell::Text(r.flagged.to_string()),
                        Cell::Text(key.clone()),
                        Cell::from(*value),
                    ]);
                }
            }
            out.series.push(s);
            out.report = Some(("lemmas".into(), to_value(&reps)?));
        }
    }
    Ok(out)
}

/// Digest of the canonical resolved plan.
pub fn plan_digest(plan: &ExperimentPlan) -> Result<String> {
    let text = serde_json::to_string(plan).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(sha256_hex(text.as_bytes()))
}

/// Runs a validated plan and writes every output plus `manifest.json` into `opts.out`.
/// Solver failures land in the manifest; only I/O problems are returned as errors.
pub fn run_plan(plan: &ExperimentPlan, opts: &RunOptions) -> Result<RunManifest> {
    std::fs::create_dir_all(&opts.out)?;
    let mut writer = Writer {
        dir: opts.out.clone(),
        format: opts.format,
        files: Vec::new(),
    };
    let resolved =
        serde_json::to_string_pretty(plan).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    writer.write("plan.resolved.json", resolved.as_bytes())?;

    let mut timings = Vec::new();
    let clock = Instant::now();
    let result = match opts.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
            .and_then(|pool| pool.install(|| plan.problem.build().and_then(|p| execute(plan, &p)))),
        None => plan.problem.build().and_then(|p| execute(plan, &p)),
    };
    timings.push(StageTiming {
        stage: plan.action().name().to_string(),
        seconds: clock.elapsed().as_secs_f64(),
    });

    let clock = Instant::now();
    let (exit_code, error, failures) = match result {
        Ok(outputs) => {
            if let Some((kind, value)) = &outputs.report {
                writer.json("report.json", kind, value)?;
            }
            for s in &outputs.series {
                writer.series(s)?;
            }
            let code = if outputs.failures.is_empty() { 0 } else { 3 };
            (code, None, outputs.failures)
        }
        Err(Error::Io(e)) => return Err(Error::Io(e)),
        Err(e) => (e.exit_code(), Some(e.to_string()), Vec::new()),
    };
    timings.push(StageTiming {
        stage: "write".into(),
        seconds: clock.elapsed().as_secs_f64(),
    });

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        action: plan.action(),
        plan_sha256: plan_digest(plan)?,
        seed: plan.seed,
        format: opts.format,
        exit_code,
        error,
        failures,
        timings,
        files: writer.files.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    std::fs::write(opts.out.join("manifest.json"), text)?;
    Ok(manifest)
}
