use std::path::Path;
use std::process::Command;

use billiard_evt_cli::config::{ReppRequest, ThresholdRequest, PERIOD2_R03};
use billiard_evt_cli::pipeline::{self, STAGES};
use billiard_evt_cli::{ConfigInvalid, ExperimentConfig};

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(PERIOD2_R03).unwrap();
    c.thresholds = vec![ThresholdRequest { n: 100, tau: 1.0 }];
    c.trajectory_length = 200_000;
    c.segment_length = 50_000;
    c.burn_in = 100;
    c.repp = ReppRequest { t_window: 1.0, n_windows: 1000 };
    c.seeds = vec![1, 2];
    c
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_billiard-evt"))
}

#[test]
fn short_trajectory_is_config_invalid() {
    let mut c = tiny();
    c.trajectory_length = 100 * 199;
    let err: ConfigInvalid = c.validate().unwrap_err();
    assert!(err.to_string().contains("trajectory_length"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let err = pipeline::run(&c, dir.path(), &mut |_| {}).unwrap_err();
    assert!(err.downcast_ref::<ConfigInvalid>().is_some());
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn completed_stages_are_not_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny();
    let first = pipeline::run(&c, dir.path(), &mut |_| {}).unwrap();
    assert_eq!(first.computed, STAGES);
    let obs = dir.path().join("observations.json");
    let stamp = std::fs::metadata(&obs).unwrap().modified().unwrap();
    let bytes = std::fs::read(&obs).unwrap();

    let second = pipeline::run(&c, dir.path(), &mut |_| {}).unwrap();
    assert!(second.computed.is_empty(), "{:?}", second.computed);
    assert_eq!(std::fs::metadata(&obs).unwrap().modified().unwrap(), stamp);
    assert_eq!(std::fs::read(&obs).unwrap(), bytes);
    assert_eq!(first.summary, second.summary);

    // a different config invalidates the manifest
    let mut other = c.clone();
    other.seeds = vec![3, 4];
    let third = pipeline::run(&other, dir.path(), &mut |_| {}).unwrap();
    assert_eq!(third.computed, STAGES);
}

#[test]
fn output_dir_does_not_change_the_digest() {
    let a = tiny();
    let mut b = a.clone();
    b.output_dir = "elsewhere".into();
    assert_eq!(a.digest(), b.digest());
    b.seeds.push(99);
    assert_ne!(a.digest(), b.digest());
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.json");
    let mut c = tiny();
    c.output_dir = dir.join("out");
    std::fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

#[test]
fn binary_runs_theta_and_find_orbit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let orbit = dir.path().join("orbit.json");
    let out = bin()
        .args(["find-orbit", "--config"])
        .arg(&config)
        .args(["--vector", "1,0", "--out"])
        .arg(&orbit)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin().args(["theta", "--orbit"]).arg(&orbit).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["theta_formula"].as_f64().unwrap() - 0.9493082760794024).abs() < 1e-12);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut c = tiny();
    c.trajectory_length = 100;
    std::fs::write(&bad, serde_json::to_string(&c).unwrap()).unwrap();
    let out = bin().args(["evt", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid"));

    let good = write_tiny_config(dir.path());
    let out = bin().args(["evt", "--config"]).arg(&good).output().unwrap();
    let code = out.status.code();
    assert!(code == Some(0) || code == Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    for f in pipeline::CSV_OUTPUTS {
        let text = std::fs::read_to_string(dir.path().join("out").join(f)).unwrap();
        assert!(text.ends_with("\r\n"), "{f}");
    }
}
