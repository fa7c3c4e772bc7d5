//! Shot records and configs survive a trip through their file formats.

use rydsim_core::config::TimeGrid;
use rydsim_core::detection::{read_shots, write_shots};
use rydsim_core::experiment::{analyze, run, Measurement, RunOptions};
use rydsim_core::ExperimentConfig;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.shots_per_point = 25;
    c.scans.blockade = TimeGrid { start_us: 0.0, stop_us: 3.0, points: 16 };
    c.scans.bell.theta_points = 8;
    c.scans.bell.recap_shots = 60;
    c.scans.bell.bootstrap_resamples = 40;
    c
}

#[test]
fn csv_round_trip_reproduces_analysis() {
    let cfg = small();
    for m in [Measurement::Blockade, Measurement::Bell] {
        let out = run(m, &cfg, &RunOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_shots(&mut buf, &out.records).unwrap();
        let back = read_shots(buf.as_slice()).unwrap();
        assert_eq!(back, out.records);
        let inferred = Measurement::from_records(&back).unwrap();
        assert_eq!(inferred, m);
        assert_eq!(analyze(inferred, &cfg, &back, &RunOptions::default()).unwrap(), out.analysis);
    }
}

#[test]
fn config_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("rydsim-config-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("c.json");
    let cfg = small();
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
    std::fs::write(&path, cfg.to_json().unwrap().replacen("\"seed\"", "\"sead\"", 1)).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn raw_bin_mode_changes_only_population_readout() {
    let cfg = small();
    let out = run(Measurement::Bell, &cfg, &RunOptions::default()).unwrap();
    let raw = analyze(Measurement::Bell, &cfg, &out.records, &RunOptions { raw_bins: true }).unwrap();
    let (a, b) = (&out.analysis.result["bell"], &raw.result["bell"]);
    assert_eq!(a["loss1"], b["loss1"]);
    assert_eq!(a["p_recap"], b["p_recap"]);
    let zero: Vec<_> = out.records.iter().filter(|r| r.series == "bell/scan" && r.scan_value == 0.0).collect();
    let both = zero.iter().filter(|r| r.present1 == 1 && r.present2 == 1).count() as f64 / zero.len() as f64;
    assert!((b["p00"].as_f64().unwrap() - both).abs() < 1e-12);
}
