use std::path::Path;
use std::process::{Command, Output};

fn cbandit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbandit")).args(args).output().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL: &str = r#"
name = "small"
horizon = 100
replications = 3
seed = 1
[environment]
kind = "quadratic"
[[policies]]
kind = "lints"
alpha = [1.0]
[[policies]]
kind = "uniform"
"#;

#[test]
fn run_writes_traces_summary_and_charts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    write(&cfg, SMALL);
    let out = dir.path().join("out");
    let o = cbandit(&["run", cfg.to_str().unwrap(), "--seeds", "2", "--horizon", "50", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["summary.json", "regret.svg", "trace_lints_1.csv", "trace_lints_2.csv", "trace_uniform_2.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(!out.join("trace_lints_3.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["version"], 1);
    assert_eq!(summary["horizon"], 50);
    assert!(std::fs::read_dir(&out).unwrap().all(|e| !e.unwrap().path().to_string_lossy().ends_with(".html")));

    let charts = dir.path().join("charts");
    let o = cbandit(&["chart", out.to_str().unwrap(), "--out", charts.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(charts.join("regret.svg").exists());

    let o = cbandit(&["compare", out.join("summary.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("lints"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    write(&cfg, "name = \"x\"\nhorizon = \"ten\"\n");
    assert_eq!(cbandit(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
    write(&cfg, &SMALL.replace("alpha = [1.0]", "alpha = [1.0]\ngamma = [0.1]"));
    assert_eq!(cbandit(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cbandit(&["run", cfg.to_str().unwrap(), "--jobs", "0"]).status.code(), Some(2));
    assert_eq!(cbandit(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(cbandit(&["chart", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cbandit(&["datasets", "validate", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn corrupt_traces_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("trace_lints_1.csv"), "t,context_hash,arm\n0,abc,not-a-number\n");
    let o = cbandit(&["chart", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn datasets_validate_reports_shape() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write(&csv, "a,b,label\n1,2,x\n3,4,y\n5,6,x\n");
    let o = cbandit(&["datasets", "validate", csv.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains('3') && text.contains('2'), "{text}");
}
