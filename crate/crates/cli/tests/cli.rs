use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn urns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urns")).args(args).output().expect("binary runs")
}

fn system(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../systems").join(format!("{name}.json")).display().to_string()
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn analyze_matches_golden_files() {
    for name in ["independent_pair", "coupled_pair", "leader_follower_b02", "leader_follower_b05", "leader_follower_b08"] {
        let dir = tempfile::tempdir().unwrap();
        let out = urns(&["analyze", "--spec", &system(name), "--out", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", stderr(&out));
        let expected = fs::read_to_string(golden(&format!("{name}.analysis.json"))).unwrap();
        let actual = fs::read_to_string(dir.path().join("analysis.json")).unwrap();
        assert_eq!(actual, expected, "{name} analysis.json");
        let summary = fs::read_to_string(golden(&format!("{name}.summary.txt"))).unwrap();
        assert_eq!(stdout(&out), summary, "{name} summary");
    }
}

#[test]
fn summary_reports_rate_strings() {
    let dir = tempfile::tempdir().unwrap();
    let out = urns(&["analyze", "--spec", &system("coupled_pair"), "--out", dir.path().to_str().unwrap()]);
    assert!(stdout(&out).contains("n^0.38"));
    let out = urns(&["analyze", "--spec", &system("coupled_pair_boundary"), "--out", dir.path().to_str().unwrap()]);
    assert!(stdout(&out).contains("sqrt(n/log n)"));
}

#[test]
fn identity_interaction_gives_one_leader_per_urn() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("three.json");
    fs::write(
        &spec,
        r#"{"K": 2, "W": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
            "urns": [{"model": "multinomial", "H": [[0.75, 0.5], [0.25, 0.5]]},
                     {"model": "deterministic", "H": [[0.875, 0.125], [0.125, 0.875]]},
                     {"model": "dirichlet", "kappa": 2.0, "H": [[0.6, 0.3], [0.4, 0.7]]}]}"#,
    )
    .unwrap();
    let out = urns(&["analyze", "--spec", spec.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.contains(" leader ")).count(), 3);
    assert_eq!(text.lines().filter(|l| l.contains(" follower ")).count(), 0);
}

#[test]
fn malformed_spec_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.json");
    fs::write(&spec, "{\"K\": 2,\n \"W\": [[1.0]\n").unwrap();
    let out = urns(&["analyze", "--spec", spec.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("line 3") && err.contains("column"), "{err}");
}

#[test]
fn simulate_writes_long_format_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = urns(&["simulate", "--spec", &system("coupled_pair"), "--seed", "3", "--steps", "1000", "--reps", "2", "--checkpoints", "10,100", "--out", d]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("replication,step,urn,color,Z,T"));
    // 2 replications x 3 checkpoints x 2 urns x 2 colors.
    assert_eq!(lines.count(), 24);
    assert!(text.contains("\n1,1000,1,1,"));
    assert!(text.lines().filter(|l| l.starts_with("0,1000,")).all(|l| l.ends_with(",1001")));
}

#[test]
fn simulate_requires_a_seed() {
    let out = urns(&["simulate", "--spec", &system("coupled_pair"), "--steps", "10"]);
    assert!(!out.status.success());
}

fn pipeline(dir: &Path) {
    let d = dir.to_str().unwrap();
    let spec = system("leader_follower_b05");
    assert!(urns(&["analyze", "--spec", &spec, "--out", d]).status.success());
    let out = urns(&["ensemble", "--spec", &spec, "--seed", "11", "--steps", "2000", "--reps", "20", "--out", d]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = urns(&["report", "--out", d]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn report_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for file in ["report.json", "series.csv", "ensemble.json", "covariance.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    let report: Value = serde_json::from_str(&fs::read_to_string(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["Z_inf"][1], serde_json::json!([0.6, 0.4]));
    assert_eq!(report["subsystems"][1]["label"], "F1");
    assert!(report["subsystems"][1]["fitted_slope"].is_number());
    let series = fs::read_to_string(a.path().join("series.csv")).unwrap();
    assert!(series.starts_with("subsystem,step,log_n,log_mean_deviation,predicted_log_deviation\n"));
    assert_eq!(series.lines().filter(|l| l.starts_with("F1,")).count(), 8);
    let cov = fs::read_to_string(a.path().join("covariance.csv")).unwrap();
    assert!(cov.starts_with("step,statistic,i,j,value\n") && cov.contains(",scaled_cov,"));
}

#[test]
fn report_on_empty_directory_is_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let out = urns(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("MissingInput"), "{}", stderr(&out));
}

#[test]
fn verify_exit_code_follows_the_checks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let spec = system("leader_follower_b02");
    let args = ["verify", "--spec", &spec, "--seed", "5", "--steps", "20000", "--reps", "40", "--checks", "limits,total_balls", "--out", d];
    let out = urns(&args);
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["checks"].as_array().unwrap().len(), 2);

    let mut strict = args.to_vec();
    strict.extend(["--tol-limit-atol", "0", "--tol-limit-se", "0"]);
    let out = urns(&strict);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL limits"));
}

#[test]
fn verify_refuses_clt_on_unbalanced_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = urns(&[
        "verify", "--spec", &system("random_scaled_pair"), "--seed", "1", "--steps", "100", "--reps", "4", "--checks", "clt", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).to_lowercase().contains("balanced"), "{}", stderr(&out));
}
