//! End-to-end command behavior: exit codes, outputs, error reporting.

use std::path::{Path, PathBuf};
use std::process::Command;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glycon"))
}

#[test]
fn simulate_missing_config_is_usage_error() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["simulate", "--config", "/nonexistent/trial.toml", "--out"])
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn simulate_unknown_config_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("trial.toml");
    std::fs::write(
        &cfg,
        "schema_version = 1\nprotocols = [\"p.toml\"]\n[trial]\nn_patients = 4\nm_schedules = 2\nnot_a_key = 1\n",
    )
    .unwrap();
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn simulate_smoke_writes_manifest_and_reports() {
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["simulate", "--config"])
        .arg(repo_root().join("configs/trial_smoke.toml"))
        .arg("--out")
        .arg(out.path())
        .args(["--jobs", "1"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.path().join("manifest.json").is_file());
    for pairing in ["protocol_a", "protocol_b"] {
        for file in ["summary.json", "records.json", "boxplot_data.csv"] {
            assert!(
                out.path().join(pairing).join(file).is_file(),
                "{pairing}/{file} missing"
            );
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert!(manifest["config_sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn retro_empty_data_dir_succeeds_with_empty_outputs() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["retro", "--data"])
        .arg(data.path())
        .arg("--protocol")
        .arg(repo_root().join("configs/protocol_a.toml"))
        .arg("--out")
        .arg(out.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let events = std::fs::read_to_string(out.path().join("events.csv")).unwrap();
    assert_eq!(events.lines().count(), 1); // header only
}

#[test]
fn retro_corrupt_csv_reports_line_and_exits_3() {
    let data = tempfile::tempdir().unwrap();
    std::fs::write(
        data.path().join("bg.csv"),
        "patient_id,time_hr,bg_mgdl\n1,0.0,150\n1,2.0,not_a_number\n",
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["retro", "--data"])
        .arg(data.path())
        .arg("--protocol")
        .arg(repo_root().join("configs/protocol_a.toml"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains(":3:"), "stderr should name line 3: {stderr}");
}

#[test]
fn retro_fixture_counts_match_shipped_data() {
    let out = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["retro", "--data"])
        .arg(repo_root().join("fixtures/retro"))
        .arg("--protocol")
        .arg(repo_root().join("configs/protocol_a.toml"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("19 hypoglycemic and 107 hyperglycemic"),
        "stderr: {stderr}"
    );
}

#[test]
fn fit_prints_json_and_honors_window() {
    let output = bin()
        .args(["fit", "--data"])
        .arg(repo_root().join("fixtures/retro"))
        .args(["--patient", "0", "--window", "24", "--seed", "7"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(doc["patient_id"], 0);
    assert_eq!(doc["window_hours"], 24.0);
    let gamma = doc["fit"]["params"]["gamma"].as_f64().unwrap();
    assert!(gamma > 0.0);
    // determinism of the printed result
    let again = bin()
        .args(["fit", "--data"])
        .arg(repo_root().join("fixtures/retro"))
        .args(["--patient", "0", "--window", "24", "--seed", "7"])
        .output()
        .unwrap();
    assert_eq!(output.stdout, again.stdout);
}

#[test]
fn fit_unreadable_data_is_usage_error() {
    let output = bin()
        .args(["fit", "--data", "/nonexistent-dir"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn fit_synthetic_recovery_close_to_truth() {
    // build a single-patient CSV set from known dynamics, fit it back
    use rand::SeedableRng;
    let dir = tempfile::tempdir().unwrap();
    let truth = glycon::msg::MsgParams {
        gamma: 0.6,
        g_b: 120.0,
        beta_n: 5.0,
        beta_i: 6.0,
        sigma: 2.0,
        r_meas: 1.0,
    };
    let insulin =
        glycon::schedule::RateSchedule::from_segments(vec![0.0, 8.0], vec![0.5, 3.0], 30.0)
            .unwrap();
    let nutrition = glycon::schedule::RateSchedule::constant(0.0, 30.0, 4.0).unwrap();
    let times: Vec<f64> = (0..=40).map(|k| 0.6 * k as f64).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let trace = glycon::msg::simulate_path(
        &truth, 150.0, 0.0, &times, &insulin, &nutrition, &mut rng,
    )
    .unwrap();
    let mut bg = String::from("patient_id,time_hr,bg_mgdl\n");
    for (t, v) in trace.iter() {
        bg.push_str(&format!("5,{t},{v}\n"));
    }
    std::fs::write(dir.path().join("bg.csv"), bg).unwrap();
    std::fs::write(
        dir.path().join("insulin.csv"),
        "patient_id,time_hr,rate_u_per_hr\n5,0.0,0.5\n5,8.0,3.0\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("nutrition.csv"),
        "patient_id,time_hr,rate_units_per_hr\n5,0.0,4.0\n",
    )
    .unwrap();

    let output = bin()
        .args(["fit", "--data"])
        .arg(dir.path())
        .args(["--seed", "3"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    let gamma = doc["fit"]["params"]["gamma"].as_f64().unwrap();
    assert!(
        (gamma - truth.gamma).abs() / truth.gamma < 0.2,
        "gamma {gamma} vs {}",
        truth.gamma
    );
}
