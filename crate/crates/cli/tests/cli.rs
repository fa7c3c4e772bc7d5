use std::path::Path;
use std::process::{Command, Output};

use rydsim_core::config::TimeGrid;
use rydsim_core::ExperimentConfig;
use serde_json::Value;

fn rydsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rydsim")).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let mut c = ExperimentConfig::default();
    c.shots_per_point = 20;
    c.scans.rabi_ground = TimeGrid { start_us: 0.0, stop_us: 3.0, points: 13 };
    c.scans.bell.theta_points = 8;
    c.scans.bell.recap_shots = 50;
    c.scans.bell.bootstrap_resamples = 30;
    let p = dir.join("config.json");
    std::fs::write(&p, c.to_json().unwrap()).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn config_subcommand_prints_defaults() {
    let out = rydsim(&["config"]);
    assert!(out.status.success());
    let cfg = ExperimentConfig::from_json(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn run_writes_outputs_and_analyze_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run_dir = dir.path().join("run");
    let out = rydsim(&["rabi-ground", "--config", &cfg, "--out", run_dir.to_str().unwrap(), "--threads", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["shots.csv", "summary.csv", "result.json", "effective_config.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let shots = std::fs::read_to_string(run_dir.join("shots.csv")).unwrap();
    assert!(shots.starts_with("series,shot,scan_value,inner_value,present1,present2,blowaway\n"));
    assert_eq!(shots.lines().count(), 1 + 13 * 20);
    let summary = std::fs::read_to_string(run_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("series,x,y,yerr,fit_y\n"));

    let again = dir.path().join("again");
    let input = run_dir.join("shots.csv");
    let out = rydsim(&["analyze", "--config", &cfg, "--input", input.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&run_dir.join("result.json")), read_json(&again.join("result.json")));
    assert_eq!(
        std::fs::read_to_string(run_dir.join("summary.csv")).unwrap(),
        std::fs::read_to_string(again.join("summary.csv")).unwrap()
    );
}

#[test]
fn overrides_reach_the_effective_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = dir.path().join("o");
    let out = rydsim(&["bell", "--config", &cfg, "--seed", "7", "--shots", "10", "--no-blowaway", "--out", o.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eff = read_json(&o.join("effective_config.json"));
    assert_eq!(eff["seed"], 7);
    assert_eq!(eff["shots_per_point"], 10);
    assert_eq!(eff["detection"]["blowaway_enabled"], false);
    let shots = std::fs::read_to_string(o.join("shots.csv")).unwrap();
    assert!(shots.lines().skip(1).all(|l| l.starts_with("bell/recap,")));
    assert!(read_json(&o.join("result.json"))["p_recap"].is_number());
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"schema_version\": 1, \"bogus\": true}").unwrap();
    let out = rydsim(&["rabi-ground", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let missing = dir.path().join("none.csv");
    let out = rydsim(&["analyze", "--input", missing.to_str().unwrap()]);
    assert!(!out.status.success());

    let out = rydsim(&["rabi-ground", "--shots", "0", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());

    assert!(!rydsim(&["teleport"]).status.success());
    assert!(!rydsim(&["analyze", "--input", "x.csv", "--measurement", "nope"]).status.success());
}

#[test]
fn calibrate_refuses_disabled_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::default();
    c.noise.phase = rydsim_core::PhaseNoiseParams::Off;
    let p = dir.path().join("off.json");
    std::fs::write(&p, c.to_json().unwrap()).unwrap();
    let out = rydsim(&["calibrate", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}
