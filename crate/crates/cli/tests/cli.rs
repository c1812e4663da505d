//! End-to-end checks of the command-line surface.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_v2i-sim"))
}

fn assert_run_outputs(dir: &Path) {
    for f in [
        "effective_config.txt",
        "summary.json",
        "sct.csv",
        "attempts.csv",
        "per.csv",
        "cbr.csv",
        "itt.csv",
        "crossings.csv",
    ] {
        assert!(dir.join(f).is_file(), "{f} missing in {}", dir.display());
    }
}

#[test]
fn run_with_defaults_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args([
            "run",
            "--set",
            "sim_duration_ms=1500",
            "--set",
            "flow_rate_vps=5",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_run_outputs(&out);
    let echoed = std::fs::read_to_string(out.join("effective_config.txt")).unwrap();
    assert!(echoed.contains("flow_rate_vps = 5"));
    assert!(echoed.contains("rng_seed = 3"));
}

#[test]
fn run_reads_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config_path = tmp.path().join("scenario.txt");
    std::fs::write(
        &config_path,
        "# test scenario\nsim_duration_ms = 1200\nflow_rate_vps = 1\nbatchsize = 2\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .arg("run")
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"batchsize\": 2"));
}

#[test]
fn invalid_override_fails_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let output = bin()
        .args(["run", "--set", "batchsize=0", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("batchsize"), "stderr: {stderr}");
}

#[test]
fn unknown_key_fails_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let output = bin()
        .args(["run", "--set", "no_such_key=1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
}

#[test]
fn trace_flag_writes_trace_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let status = bin()
        .args([
            "run",
            "--set",
            "sim_duration_ms=1000",
            "--set",
            "flow_rate_vps=1",
            "--trace",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("trace.csv").is_file());
    assert!(out.join("cbr_trace.csv").is_file());
}

#[test]
fn identical_runs_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let status = bin()
            .args([
                "run",
                "--set",
                "sim_duration_ms=1500",
                "--set",
                "flow_rate_vps=5",
                "--seed",
                "9",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    for f in [
        "effective_config.txt",
        "summary.json",
        "sct.csv",
        "cbr.csv",
        "itt.csv",
        "crossings.csv",
        "attempts.csv",
        "per.csv",
    ] {
        let a = std::fs::read(out_a.join(f)).unwrap();
        let b = std::fs::read(out_b.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between identical runs");
    }
}

#[test]
fn sweep_builds_product_directories_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let status = bin()
        .args([
            "sweep",
            "--set",
            "sim_duration_ms=1200",
            "--flows",
            "1,5",
            "--batchsizes",
            "1,2",
            "--seeds",
            "4..4",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for dir in ["f1_b1_s4", "f1_b2_s4", "f5_b1_s4", "f5_b2_s4"] {
        assert_run_outputs(&out.join(dir));
    }
    for plot in ["sct_cdf.csv", "cbr.csv", "itt.csv", "attempts.csv", "per.csv"] {
        assert!(out.join("plots").join(plot).is_file());
    }
}
