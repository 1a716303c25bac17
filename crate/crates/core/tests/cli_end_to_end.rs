//! Drives the installed `cfstep` binary end to end: exit codes, emitted
//! files, and configuration layering.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cfstep"))
}

#[test]
fn simulate_writes_a_parseable_csv_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let status = bin()
        .args(["simulate", "--scene", "sliding_cube", "--stepper", "cf_extended", "--steps", "20"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("step,time_s,obj0_px"), "unexpected header: {header}");
    assert!(header.ends_with("solve_ms"), "unexpected header: {header}");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20);
    let n_cols = header.split(',').count();
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), n_cols);
        for field in &fields[1..] {
            field.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn simulate_prints_to_stdout_without_out_flag() {
    let output = bin()
        .args(["simulate", "--scene", "falling_cube", "--steps", "5"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 6);
    assert!(stdout.starts_with("step,time_s"));
}

#[test]
fn bench_emits_speedup_metrics_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let status = bin()
        .args(["bench", "--steps", "5"])
        .args(["--set", "scene.n_cubes=2", "--set", "bench.repeats=1"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(metrics["scene"], "push_boxes_2");
    assert_eq!(metrics["steps"], 5);
    assert!(metrics["speedup"].as_f64().unwrap() > 0.0);
    assert!(metrics["qp_mean_ms"].as_f64().unwrap() >= metrics["qp_min_ms"].as_f64().unwrap());
}

#[test]
fn mpc_emits_per_trial_metrics_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mpc.json");
    let status = bin()
        .args(["mpc", "--scene", "fingertips_box", "--task", "rotation", "--seeds", "8"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(metrics["task"], "rotation");
    let trials = metrics["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 1);
    assert_eq!(trials[0]["seed"], 8);
    assert_eq!(trials[0]["success"], true);
    assert!(metrics["mean_solve_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn validate_returns_success_and_prints_suite_lines() {
    let output = bin().arg("validate").output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 6);
    assert!(stdout.lines().all(|l| l.contains("pass")));
}

#[test]
fn config_file_drives_a_run_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(&config, "scene = falling_cube # overridden by the flag\nsteps = 3\n").unwrap();
    let out = dir.path().join("trace.csv");
    let status = bin()
        .arg("simulate")
        .arg("--config")
        .arg(&config)
        .args(["--scene", "sliding_cube"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    // the flag picks the scene, the file keeps its step count
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().contains("obj0_px"));
    assert!(!text.lines().next().unwrap().contains("r0"), "sliding cube has no robot coords");
}

#[test]
fn unknown_scene_exits_with_usage_code() {
    let output = bin().args(["simulate", "--scene", "tower"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("unknown scene"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_with_usage_code() {
    let output = bin()
        .args(["simulate", "--set", "mpc.learning_rate=0.1"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("unknown configuration key"), "stderr: {stderr}");
}

#[test]
fn solver_scale_failures_exit_with_runtime_code() {
    // a non-positive step size is rejected while parsing, not while solving
    let output = bin()
        .args(["simulate", "--scene", "sliding_cube", "--set", "scene.h=-0.1"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("step size must be positive"), "stderr: {stderr}");
}
