use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn capaplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capaplan")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Copies a shipped spec into `dir`, pointing its references back at the fixtures.
fn copy_spec(dir: &Path, name: &str, edit: impl FnOnce(&mut Value)) {
    let text = std::fs::read_to_string(fixtures().join("scenarios").join(format!("{name}.json"))).unwrap();
    let mut spec: Value = serde_json::from_str(&text).unwrap();
    let base = fixtures().join("scenarios");
    spec["fixture"] = base.join(spec["fixture"].as_str().unwrap()).to_string_lossy().into();
    for s in spec["scripts"].as_array_mut().unwrap() {
        *s = base.join(s.as_str().unwrap()).to_string_lossy().into();
    }
    edit(&mut spec);
    std::fs::write(dir.join(format!("{name}.json")), spec.to_string()).unwrap();
}

#[test]
fn empty_suite_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = capaplan(&["suite", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
}

#[test]
fn suite_with_a_failing_case_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    copy_spec(dir.path(), "sat-01", |_| {});
    copy_spec(dir.path(), "sat-02", |spec| {
        spec["id"] = "sat-02-wrong".into();
        let step = &mut spec["expect"]["steps"][0]["assignments"];
        let key = step.as_object().unwrap().keys().next().unwrap().clone();
        step[key] = serde_json::json!({"integer": "99"});
    });
    let out = capaplan(&["suite", dir.path().to_str().unwrap(), "--reps", "1"]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    let table = stdout(&out);
    assert!(table.contains("sat-01") && table.contains("sat-02-wrong"));
    assert!(table.contains("SAT"));
}

#[test]
fn suite_json_report_is_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    copy_spec(dir.path(), "kq-01", |_| {});
    let out = capaplan(&["suite", dir.path().to_str().unwrap(), "--json"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["cases"][0]["id"], "kq-01");
}

#[test]
fn run_reports_one_case() {
    let spec = fixtures().join("scenarios/unsat-01.json");
    let out = capaplan(&["run", "--scenario", spec.to_str().unwrap(), "--reps", "2"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("reps=2 identical=true"));
}

#[test]
fn model_validate_accepts_fixtures_and_rejects_garbage() {
    for f in ["plant.json", "plant.ttl", "plant_redundant.json"] {
        let out = capaplan(&["model", "validate", fixtures().join("models").join(f).to_str().unwrap()]);
        assert!(out.status.success(), "{f}");
        assert!(stdout(&out).starts_with("valid:"));
    }
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"resources": 3}"#).unwrap();
    assert_eq!(capaplan(&["model", "validate", bad.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn serve_rejects_an_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, "{}").unwrap();
    let out = capaplan(&["serve", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid configuration"));
}
