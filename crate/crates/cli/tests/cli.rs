use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use epds::scenario::builtin;
use serde_json::Value;

fn epds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epds"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line on stderr");
    serde_json::from_str(line).expect("stderr is JSON")
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn benchmark_run_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = epds(&["run", "higs_benchmark", "--out", out.to_str().unwrap(), "--h", "0.01", "--T", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2001);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 2000);
    assert_eq!(summary["h"], 0.01);
    assert!(summary["max_sector_residual"].as_f64().unwrap() < 0.05);
    // No stray temporary files next to the outputs.
    assert_eq!(fs::read_dir(&out).unwrap().count(), 2);
}

#[test]
fn scenario_file_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let sc = builtin("tracking").unwrap();
    let path = write_scenario(dir.path(), "tracking.json", &sc.to_json());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(epds(&["run", &path, "--out", a.to_str().unwrap()]).status.success());
    assert!(epds(&["run", "tracking", "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(
        fs::read(a.join("trace.csv")).unwrap(),
        fs::read(b.join("trace.csv")).unwrap()
    );
}

#[test]
fn initial_state_outside_the_set_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = builtin("higs_benchmark").unwrap();
    sc.initial_state = vec![-1.0, 0.0, 3.0];
    let path = write_scenario(dir.path(), "bad.json", &sc.to_json());
    let out = dir.path().join("out");
    let o = epds(&["run", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["field"], "initial_state");
    assert!(err["line"].as_u64().unwrap() > 1);
    assert!(!out.join("trace.csv").exists());
}

#[test]
fn malformed_json_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(dir.path(), "bad.json", "{\n  \"name\": \"x\",\n  \"horizon\": \"long\"\n}");
    let o = epds(&["run", &path, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["field"], "horizon");
    assert_eq!(err["line"], 3);
}

#[test]
fn unknown_scenario_name_exits_1() {
    let o = epds(&["run", "no_such_scenario", "--out", "/nonexistent"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["field"], "scenario");
}

#[test]
fn bad_step_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = epds(&["run", "higs_benchmark", "--out", dir.path().to_str().unwrap(), "--h=-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["field"], "h");
}

#[test]
fn blowup_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = epds(&["run", "blowup", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["kind"], "StateExploded");
    assert!(!out.join("summary.json").exists());
}

#[test]
fn verify_projection_is_deterministic() {
    let args = ["verify-projection", "--count", "200", "--seed", "3", "--max-dim", "4"];
    let a = epds(&args);
    let b = epds(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let r: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(r["checked"], 200);
    assert_eq!(r["mismatches"], 0);
    assert!(r.get("worst_case").is_some());
}

#[test]
fn verify_krasovskii_reports_the_corner_witness() {
    let args = ["verify-krasovskii", "--count", "30", "--seed", "5"];
    let a = epds(&args);
    let b = epds(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    let r: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(r["fg_checked"], 30);
    let corner = &r["corner_example"];
    assert_eq!(corner["holds"], false);
    let near = |w: &Value| {
        let w: Vec<f64> = serde_json::from_value(w.clone()).unwrap();
        (w[0] - 1.0).abs() <= 1e-9 && w[1].abs() <= 1e-9
    };
    assert!(corner["witnesses"].as_array().unwrap().iter().any(near));
}

#[test]
fn sweep_reports_every_step() {
    let o = epds(&["sweep", "higs_benchmark", "--h-list", "0.01,0.005,0.0025", "--T", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = r.to_string();
    for h in ["0.01", "0.005", "0.0025"] {
        assert!(text.contains(h), "{text}");
    }
}

#[test]
fn horizon_past_the_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc: Value = serde_json::from_str(&builtin("step_input").unwrap().to_json()).unwrap();
    let horizon = sc["horizon"].as_f64().unwrap();
    sc["input"]["end"] = (horizon + 1.0).into();
    let path = write_scenario(dir.path(), "ends.json", &sc.to_string());
    let out = dir.path().join("out");
    assert!(epds(&["run", &path, "--out", out.to_str().unwrap()]).status.success());
    let o = epds(&["run", &path, "--out", out.to_str().unwrap(), "--T", &(horizon + 2.0).to_string()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["field"], "T");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(epds(&["run"]).status.code(), Some(1));
    assert_eq!(epds(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(epds(&["--help"]).status.code(), Some(0));
}

#[test]
fn shipped_scenarios_match_builtins() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for name in epds::scenario::BUILTIN_NAMES {
        let text = fs::read_to_string(dir.join(format!("{name}.json"))).unwrap();
        let loaded = epds::scenario::Scenario::from_json(&text).unwrap();
        assert_eq!(loaded.scenario, builtin(name).unwrap(), "{name}");
    }
}
