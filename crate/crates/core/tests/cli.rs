//! The binary's exit-code contract and outputs.

use std::path::Path;
use std::process::Command;

use ahrf::cli::{cmd_verify, FlowSummary, RunConfig};
use ahrf::field::GridState;
use ahrf::report::Report;

fn ahrf(dir: &Path, args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_ahrf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("exit code")
}

fn small_flow_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, format!("[grid]\nshape = [5, 5, 5, 5]\n{extra}\n[flow]\nsteps = 3\n")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn flat_verify_passes_with_zero_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["verify", "--dims", "4", "--seeds", "1", "--amplitude", "0", "--json", "out.json", "--csv", "rows.csv"];
    assert_eq!(ahrf(dir.path(), &args), 0);
    let report: Report = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out.json")).unwrap()).unwrap();
    assert!(report.summary.total > 0 && report.summary.failed == 0);
    assert!(report.rows.iter().all(|r| r.residual == 0.0));
    let csv = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
    assert!(csv.starts_with("id,anchor,dim,seed,residual,tol,pass"));
    assert_eq!(csv.lines().count(), report.rows.len() + 1);
}

#[test]
fn corrupted_d_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ahrf(dir.path(), &["verify", "--dims", "4", "--seeds", "2", "--corrupt-d"]), 1);
}

#[test]
fn symbol_suite_passes_for_the_valid_operators() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ahrf(dir.path(), &["symbol", "--dims", "4,6", "--seeds", "2", "--ops", "D2,A"]), 0);
    assert_eq!(ahrf(dir.path(), &["symbol", "--dims", "4", "--seeds", "1", "--ops", "D9"]), 2);
}

#[test]
fn usage_and_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ahrf(dir.path(), &["verify", "--dims", "5"]), 2);
    assert_eq!(ahrf(dir.path(), &["nonsense"]), 2);
    std::fs::write(dir.path().join("bad.toml"), "[flow]\nsteps = 0\n").unwrap();
    assert_eq!(ahrf(dir.path(), &["flow", "--config", "bad.toml"]), 2);
    std::fs::write(dir.path().join("typo.toml"), "dimz = [4]\n").unwrap();
    assert_eq!(ahrf(dir.path(), &["verify", "--config", "typo.toml"]), 2);
    let cfg = small_flow_config(dir.path(), "");
    assert_eq!(ahrf(dir.path(), &["flow", "--config", &cfg, "--dt", "-0.1"]), 2);
}

#[test]
fn flat_flow_is_stationary_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_flow_config(dir.path(), "amplitude = 0.0");
    let args = ["flow", "--config", &cfg, "--csv", "m.csv", "--json", "s.json", "--snapshot", "end.bin"];
    assert_eq!(ahrf(dir.path(), &args), 0);
    let summary: FlowSummary = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert!(summary.completed && summary.max_drift < 1e-14);
    assert_eq!(summary.report.monitors.len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let end = GridState::read_binary(std::fs::File::open(dir.path().join("end.bin")).unwrap()).unwrap();
    assert_eq!(end.sites(), 625);
}

#[test]
fn step_ten_times_the_bound_halts_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // h = 2π/5, so the default bound is 0.1·h² ≈ 0.158
    let cfg = small_flow_config(dir.path(), "");
    assert_eq!(ahrf(dir.path(), &["flow", "--config", &cfg, "--dt", "1.58", "--json", "s.json"]), 1);
    let summary: FlowSummary = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert!(!summary.completed);
    assert!(summary.halted_step.is_some() && summary.reason.is_some());
}

#[test]
fn reports_are_bitwise_reproducible() {
    let cfg = RunConfig::from_toml("dims = [4, 6]\nseeds = 3\n").unwrap();
    let (a, b) = (cmd_verify(&cfg).unwrap().1, cmd_verify(&cfg).unwrap().1);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
