//! Command-line front end: `mfglab <action> --config plan.json --out dir`.

pub mod config;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    parse_config, parse_config_str, Action, ActionParams, ExperimentPlan, ProblemConfig,
};
pub use run::{read_envelope, run_plan, Envelope, OutputFormat, RunManifest, RunOptions, Series};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(
    name = "mfglab",
    version,
    about = "Mean field game experiments on the torus"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-horizon system by damped Picard iteration.
    SolveFinite(RunArgs),
    /// Ergodic triple `(lambda, u_bar, m_bar)`.
    SolveErgodic(RunArgs),
    /// Stationary discounted system.
    SolveDiscounted(RunArgs),
    /// Distance to the ergodic pair along a finite-horizon solution, with an exponential fit.
    Turnpike(RunArgs),
    /// Cauchy study of `u^T - lambda (T - t)` over increasing horizons.
    HorizonLimit(RunArgs),
    /// Sweep of the discounted problem as the discount vanishes.
    VanishingDiscount(RunArgs),
    /// Infinite-horizon tails against the ergodic limit.
    Commutation(RunArgs),
    /// Multi-start probe for distinct solutions.
    Multiplicity(RunArgs),
    /// Linear decay estimates on a case list.
    Lemmas(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment plan (JSON, schema_version 1).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the plan's `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweep rows.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Random seed; overrides the plan's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

impl Command {
    fn split(self) -> (Action, RunArgs) {
        match self {
            Command::SolveFinite(a) => (Action::SolveFinite, a),
            Command::SolveErgodic(a) => (Action::SolveErgodic, a),
            Command::SolveDiscounted(a) => (Action::SolveDiscounted, a),
            Command::Turnpike(a) => (Action::Turnpike, a),
            Command::HorizonLimit(a) => (Action::HorizonLimit, a),
            Command::VanishingDiscount(a) => (Action::VanishingDiscount, a),
            Command::Commutation(a) => (Action::Commutation, a),
            Command::Multiplicity(a) => (Action::Multiplicity, a),
            Command::Lemmas(a) => (Action::Lemmas, a),
        }
    }
}

/// Runs one command and returns the process exit status.
pub fn execute(cli: Cli) -> i32 {
    let (action, args) = cli.command.split();
    let mut plan = match parse_config(&args.config, Some(action)) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("mfglab: {e}");
            return e.exit_code();
        }
    };
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    let out = match args.out.or_else(|| plan.output.as_ref().map(PathBuf::from)) {
        Some(o) => o,
        None => {
            let e = Error::Config {
                path: "output".into(),
                message: "no output directory (use --out or set `output`)".into(),
            };
            eprintln!("mfglab: {e}");
            return e.exit_code();
        }
    };
    let opts = RunOptions {
        out,
        format: args.format,
        jobs: args.jobs,
    };
    match run_plan(&plan, &opts) {
        Ok(m) => {
            if let Some(err) = &m.error {
                eprintln!("mfglab: {err}");
            }
            for f in &m.failures {
                eprintln!("mfglab: row {} failed: {}", f.parameter, f.error);
            }
            m.exit_code
        }
        Err(e) => {
            eprintln!("mfglab: {e}");
            e.exit_code()
        }
    }
}
