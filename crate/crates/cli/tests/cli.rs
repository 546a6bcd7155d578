use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn horolab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_horolab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn catalog_lists_all_families_and_the_pinched_surface() {
    let out = horolab(&["list-builtins", "--json"]);
    assert!(out.status.success());
    let cat: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = cat
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    for n in ["RH3", "CH2", "HH2", "OH2", "pinched", "tau-suite", "meanvalue-h2"] {
        assert!(names.contains(&n), "{n} missing from {names:?}");
    }
    let text = horolab(&["list-builtins"]);
    assert!(String::from_utf8(text.stdout).unwrap().contains("pinched"));
}

#[test]
fn tau_config_reports_closed_form_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("tau-ross.json");
    let out = horolab(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("tau-ross.report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["failed"], 0);
    let mut rdr = csv::Reader::from_path(dir.path().join("tau-ross.tau.csv")).unwrap();
    let taus: Vec<f64> = rdr.records().map(|r| r.unwrap()[4].parse().unwrap()).collect();
    assert!((taus[0] - 0.25).abs() < 1e-9);
    assert!((taus[1] - 0.0625).abs() < 1e-9);
}

#[test]
fn malformed_config_exits_with_config_code_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    for (i, body) in [
        "{ not json",
        r#"{"name": "x", "kind": "tau", "tolerances": {"relative": 0}}"#,
        r#"{"name": "x", "kind": "tau", "profiles": [{"kind": "builtin", "name": "nowhere"}]}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = write_config(dir.path(), &format!("bad{i}.json"), body);
        let out = horolab(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(3), "{body}");
    }
    let missing = horolab(&["run", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(!out_dir.exists());
}

#[test]
fn usage_errors_exit_with_code_two() {
    assert_eq!(horolab(&["run"]).status.code(), Some(2));
    assert_eq!(horolab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(horolab(&["run", "x.json", "--seed", "minus"]).status.code(), Some(2));
}

#[test]
fn failing_check_and_numeric_failure_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let strict = write_config(
        dir.path(),
        "strict.json",
        r#"{"name": "strict", "kind": "tau", "profiles": [{"kind": "builtin", "name": "CH2"}],
            "tolerances": {"relative": 1e-300}}"#,
    );
    assert_eq!(horolab(&["run", &strict]).status.code(), Some(1));
    let nan = write_config(
        dir.path(),
        "nan.json",
        r#"{"name": "nan", "kind": "meanvalue", "radius_budget": 1,
            "boundary_functions": [{"name": "bad", "expr": "1/0"}]}"#,
    );
    assert_eq!(horolab(&["run", &nan]).status.code(), Some(4));
}

#[test]
fn reruns_with_the_same_seed_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cmp.json",
        r#"{"name": "cmp", "kind": "comparison", "surface": {"kind": "builtin", "name": "pinched"}, "trials": 12}"#,
    );
    let read = |sub: &str| {
        let d = dir.path().join(sub);
        let out = horolab(&["run", &cfg, "--seed", "7", "--out", d.to_str().unwrap(), "--plots"]);
        assert_eq!(out.status.code(), Some(0));
        (
            fs::read(d.join("cmp.report.json")).unwrap(),
            fs::read(d.join("cmp.triangles.csv")).unwrap(),
            fs::read(d.join("cmp.triangles.svg")).unwrap(),
        )
    };
    assert_eq!(read("a"), read("b"));
    let other = dir.path().join("c");
    horolab(&["run", &cfg, "--seed", "8", "--out", other.to_str().unwrap()]);
    assert_ne!(fs::read(other.join("cmp.triangles.csv")).unwrap(), read("a").1);
}

#[test]
fn builtin_experiment_names_run_directly_as_json() {
    let out = horolab(&["run", "rigidity-suite", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let rep: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep["experiment"], "rigidity");
    assert_eq!(rep["provenance"]["seed"], 0);
}
