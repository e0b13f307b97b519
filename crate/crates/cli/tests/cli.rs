use std::path::Path;
use std::process::{Command, Output};

fn oldsgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oldsgd"))
        .args(args)
        .env("OLDSGD_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        format!(
            r#"{{
                "schema_version": 1,
                "algorithm": "oldsgd",
                "topology": {{"kind": "ring", "n": 4}},
                "objective": {{"kind": "quadratic", "d": 3, "l_min": 0.5, "zeta2": 1.0}},
                "noise": {{"kind": "additive", "sigma": 0.1}},
                "hyperparams": {{"alpha": 0.1, "tau": 2, "iterations": 200}}{extra}
            }}"#
        ),
    )
    .unwrap();
    path.display().to_string()
}

#[test]
fn run_writes_trace_and_reports_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let trace = dir.path().join("trace.csv");
    let out = oldsgd(&["run", "--config", &cfg, "--output", trace.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("# oldsgd trace"));
    assert!(text.contains("iteration,simulated_time,loss,grad_norm_sq,consensus_error,diverged"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 202);

    let cfg = write_config(dir.path(), r#", "target_loss": 1e9"#);
    let out = oldsgd(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["status"], "converged");
}

#[test]
fn sweep_then_speedup_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let grid = dir.path().join("grid.json");
    std::fs::write(&grid, r#"{"tau": [1, 2], "c": [1], "algorithm": ["oldsgd", "ldsgd"], "seed": [0]}"#)
        .unwrap();
    let out_dir = dir.path().join("runs");
    let out = oldsgd(&[
        "sweep",
        "--config",
        &cfg,
        "--grid",
        grid.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(index.as_array().unwrap().len(), 4);

    let out = oldsgd(&["report-speedup", "--traces", out_dir.to_str().unwrap(), "--target", "-1e-9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["reference"], "oldsgd");
}

#[test]
fn print_commands() {
    let out = oldsgd(&["print-mixing", "--n", "3", "--kind", "complete"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# lambda2:"));

    let out = oldsgd(&["print-timeline", "--algorithm", "oldsgd", "--tau", "5", "--c", "5", "--n", "2"]);
    assert!(out.status.success());
    let timeline: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(timeline["makespan"], 10.0);
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#", "unknown_field": 3"#);
    let out = oldsgd(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
