use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfglab::cli::run::Cell;
use mfglab::cli::{parse_config_str, read_envelope, Action, RunManifest, Series};
use mfglab::lab::{vanishing_discount_study, StudyReport, VanishingDiscountOptions};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfglab"))
}

fn plan(problem: &str, params: &str) -> String {
    format!(
        r#"{{
  "schema_version": 1,
  "problem": {problem},
  "params": {params}
}}"#
    )
}

const P0: &str = r#"{
    "grid": { "n": 32 },
    "kappa": 1.0,
    "hamiltonian": { "family": "quadratic" }
  }"#;

const P0_FM: &str = r#"{
    "grid": { "n": 32 },
    "kappa": 1.0,
    "hamiltonian": { "family": "quadratic" },
    "coupling": { "slope": 1.0 }
  }"#;

const P1_SMALL: &str = r#"{
    "grid": { "n": 32 },
    "kappa": 1.0,
    "hamiltonian": { "family": "quadratic" },
    "coupling": { "base": [{ "kind": "sin", "amp": 0.5, "k": 1 }], "slope": 1.0 }
  }"#;

fn write_plan(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("plan.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(action: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(action)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines
        .next()
        .unwrap()
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[test]
fn solve_finite_writes_resolved_plan_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_plan(dir.path(), &plan(P0, r#"{ "horizon": 1.0 }"#));
    let out = dir.path().join("run");
    let o = run("solve-finite", &cfg, &out, &[]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let resolved = std::fs::read_to_string(out.join("plan.resolved.json")).unwrap();
    let plan = parse_config_str(&resolved, None).unwrap();
    assert_eq!(plan.action, Some(Action::SolveFinite));
    assert!(resolved.contains("\"max_iters\": 2000"));
    let m = manifest(&out);
    let names: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
    for f in [
        "plan.resolved.json",
        "report.json",
        "profile.csv",
        "convergence.csv",
    ] {
        assert!(names.contains(&f), "{names:?}");
    }
    for f in &m.files {
        let bytes = std::fs::read(out.join(&f.path)).unwrap();
        assert_eq!(bytes.len() as u64, f.bytes);
    }
    let (header, rows) = csv(&out.join("profile.csv"));
    assert_eq!(header, ["x", "u_0", "m_0", "u_T", "m_T"]);
    assert_eq!(rows.len(), 32);
    for r in rows {
        assert_eq!(r[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(r[2].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn turnpike_csv_schema_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_plan(dir.path(), &plan(P1_SMALL, r#"{ "horizon": 2.0 }"#));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("turnpike", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(
        run("turnpike", &cfg, &b, &["--jobs", "1"]).status.code(),
        Some(0)
    );
    let (header, rows) = csv(&a.join("turnpike.csv"));
    assert_eq!(header, ["t", "d", "model_d"]);
    assert_eq!(rows.len(), 201);
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma.files, mb.files);
    assert_eq!(ma.plan_sha256, mb.plan_sha256);
}

#[test]
fn coarse_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_plan(
        dir.path(),
        &plan(&P0.replace("\"n\": 32", "\"n\": 3"), "{}"),
    );
    let o = run("solve-finite", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.n"));
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_plan(dir.path(), &plan(P0, r#"{ "gamma_typo": 0.1 }"#));
    let o = run("solve-finite", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("gamma_typo") && err.contains("params"),
        "{err}"
    );
}

#[test]
fn missing_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_plan(dir.path(), &plan(P0, "{}"));
    let o = bin()
        .arg("solve-finite")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_plan(dir.path(), &plan(P0, r#"{ "horizon": 0.1 }"#));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run("solve-finite", &cfg, &blocker.join("sub"), &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn failing_row_gives_nonzero_exit_and_keeps_other_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_plan(
        dir.path(),
        &plan(
            P1_SMALL,
            r#"{ "deltas": [0.2, 0.1, 0.0], "evolution": false }"#,
        ),
    );
    let out = dir.path().join("out");
    let o = run("vanishing-discount", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let (header, rows) = csv(&out.join("vanishing_discount.csv"));
    assert_eq!(header, ["delta", "e_delta", "ratio", "verdict"]);
    assert_eq!(rows.len(), 3);
    assert!(rows[0][1].parse::<f64>().unwrap() > 0.0);
    assert!(rows[1][1].parse::<f64>().unwrap() > 0.0);
    assert_eq!(rows[2][1], "");
    assert_eq!(rows[2][3], "fail");
    let m = manifest(&out);
    assert_eq!(m.exit_code, 3);
    assert_eq!(m.failures.len(), 1);
    assert_eq!(m.failures[0].parameter, 0.0);
}

#[test]
fn json_report_round_trips_and_csv_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let text = plan(P1_SMALL, r#"{ "deltas": [0.2, 0.1], "evolution": false }"#);
    let cfg = write_plan(dir.path(), &text);
    let (csv_dir, json_dir) = (dir.path().join("csv"), dir.path().join("json"));
    assert_eq!(
        run("vanishing-discount", &cfg, &csv_dir, &[]).status.code(),
        Some(0)
    );
    assert_eq!(
        run("vanishing-discount", &cfg, &json_dir, &["--format", "json"])
            .status
            .code(),
        Some(0)
    );

    let plan = parse_config_str(&text, Some(Action::VanishingDiscount)).unwrap();
    let problem = plan.problem.build().unwrap();
    let opts = VanishingDiscountOptions {
        evolution: false,
        ..Default::default()
    };
    let direct = vanishing_discount_study(&problem, &[0.2, 0.1], &opts, &plan.solver).unwrap();

    let env = read_envelope::<StudyReport>(&json_dir.join("report.json")).unwrap();
    assert_eq!(env.schema_version, 1);
    assert_eq!(env.data, direct);
    let again: StudyReport =
        serde_json::from_str(&serde_json::to_string(&env.data).unwrap()).unwrap();
    assert_eq!(again, direct);

    // full precision survives the text round trip
    let (_, rows) = csv(&csv_dir.join("vanishing_discount.csv"));
    for (row, want) in rows.iter().zip(direct.series("e_delta")) {
        assert_eq!(
            row[1].parse::<f64>().unwrap().to_bits(),
            want.unwrap().to_bits()
        );
    }
    let series = read_envelope::<Series>(&json_dir.join("vanishing_discount.json")).unwrap();
    assert_eq!(
        series.data.columns,
        ["delta", "e_delta", "ratio", "verdict"]
    );
    assert_eq!(
        series.data.rows[0][1],
        Cell::Num(direct.series("e_delta")[0])
    );
}

#[test]
fn homogeneous_horizon_limit_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_plan(
        dir.path(),
        &plan(P0_FM, r#"{ "horizons": [1.0, 2.0, 4.0], "t_probe": 0.25 }"#),
    );
    let out = dir.path().join("out");
    assert_eq!(
        run("horizon-limit", &cfg, &out, &["--jobs", "2"])
            .status
            .code(),
        Some(0)
    );
    let (header, rows) = csv(&out.join("horizon_limit.csv"));
    assert_eq!(
        header,
        ["T", "bound", "delta_u", "delta_m", "ratio", "verdict"]
    );
    for r in &rows[1..] {
        assert!(r[2].parse::<f64>().unwrap() <= 1e-12);
    }
}

#[test]
fn seed_flag_changes_multiplicity_seeds_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_plan(
        dir.path(),
        &plan(P1_SMALL, r#"{ "horizon": 0.5, "seeds": 2 }"#),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        run("multiplicity", &cfg, &a, &["--seed", "1"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run("multiplicity", &cfg, &b, &["--seed", "2"])
            .status
            .code(),
        Some(0)
    );
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!((ma.seed, mb.seed), (1, 2));
    assert_ne!(ma.plan_sha256, mb.plan_sha256);
    let report = read_envelope::<StudyReport>(&a.join("report.json"))
        .unwrap()
        .data;
    assert_eq!(report.summary["clusters"], 1.0);
}

#[test]
fn lemmas_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    let params = r#"{ "lemma_cases": [
        { "name": "heat", "kappa": 1.0, "n": 64, "horizon": 0.3, "dt": 0.001, "drift": { "kind": "zero" } }
    ] }"#;
    let cfg = write_plan(dir.path(), &plan(P0, params));
    let out = dir.path().join("out");
    assert_eq!(run("lemmas", &cfg, &out, &[]).status.code(), Some(0));
    let (header, rows) = csv(&out.join("lemmas.csv"));
    assert_eq!(
        header,
        ["lemma", "case", "pass", "flagged", "constant", "value"]
    );
    assert!(rows
        .iter()
        .any(|r| r[0] == "weighted-bound" && r[4] == "c_suite"));
}
