use std::path::Path;
use std::process::{Command, Output};

fn lfrgp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfrgp")).args(args).current_dir(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn help_lists_every_verb() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfrgp(&["--help"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for verb in ["prior", "learned", "sweep", "simulate", "replay-certificate"] {
        assert!(text.contains(verb), "{verb} missing from help");
    }
}

#[test]
fn unknown_verb_and_config_key_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lfrgp(&["bogus"], dir.path())), 1);
    std::fs::write(dir.path().join("bad.toml"), "nope = 1\n").unwrap();
    assert_eq!(code(&lfrgp(&["prior", "--config", "bad.toml"], dir.path())), 1);
}

#[test]
fn sector_without_zero_is_an_assumption_violation() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("pos.toml"), "prior_sector = [0.1, 0.5]\n").unwrap();
    assert_eq!(code(&lfrgp(&["prior", "--config", "pos.toml"], dir.path())), 3);
}

#[test]
fn oversized_sector_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("big.toml"), "prior_sector = [-10.0, 10.0]\n").unwrap();
    let o = lfrgp(&["prior", "--config", "big.toml", "--out", "o"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("o/prior/report.json").exists());
}

#[test]
fn prior_report_replays_and_simulates() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfrgp(&["prior", "--iters", "2", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["replay_passed"], serde_json::Value::Bool(true));
    for file in ["config.toml", "prior/report.json", "prior/certificate.json", "prior/levels.csv"] {
        assert!(dir.path().join("o").join(file).exists(), "{file}");
    }

    let o = lfrgp(&["replay-certificate", "--report", "o/prior/report.json", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0);

    let o = lfrgp(&["simulate", "--report", "o/prior/report.json", "--out", "o"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sim: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(sim["step_bounded"], serde_json::Value::Bool(true));
    let csv = std::fs::read_to_string(dir.path().join("o/simulate/trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,"));
}

#[test]
fn tampered_certificate_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&lfrgp(&["prior", "--iters", "1", "--out", "o"], dir.path())), 0);
    let path = dir.path().join("o/prior/report.json");
    let mut report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let gamma = &mut report["certificate"]["gamma"];
    *gamma = serde_json::json!(gamma.as_f64().unwrap() * 0.5);
    std::fs::write(&path, serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(code(&lfrgp(&["replay-certificate", "--report", "o/prior/report.json"], dir.path())), 4);
}

#[test]
fn default_learned_sector_is_reported_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let o = lfrgp(&["learned", "--out", "o"], dir.path());
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["status"], serde_json::Value::String("initial_analysis_infeasible".into()));
    assert!(dir.path().join("o/learned/band.csv").exists());
}
