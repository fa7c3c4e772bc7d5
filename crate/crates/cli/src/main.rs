use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use rydsim_core::constants::{TWO_PI, US};
use rydsim_core::detection::{read_shots, write_shots};
use rydsim_core::experiment::{
    analyze, calibrate_phase_noise, run, write_summary, Analysis, CalibrationTarget, Measurement, RunOptions,
};
use rydsim_core::ExperimentConfig;

/// Monte-Carlo simulator of a two-atom Rydberg-blockade experiment.
#[derive(Parser)]
#[command(name = "rydsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground-state Raman Rabi flop.
    RabiGround(RunArgs),
    /// Ground-state Ramsey: T2* from detuning scans, T2' from spin echo.
    RamseyGround(RunArgs),
    /// Single-atom ground-Rydberg Rabi flop.
    RabiRydberg(RunArgs),
    /// Ground-Rydberg Ramsey dephasing.
    RamseyRydberg(RunArgs),
    /// Single-atom versus blockaded pair Rydberg flops.
    Blockade(RunArgs),
    /// Bell-state preparation, parity scan and recapture calibration.
    Bell(RunArgs),
    /// Re-analyse a shots.csv file.
    Analyze(AnalyzeArgs),
    /// Tune phase noise and Rydberg drive to a measured Rabi flop.
    Calibrate(CalibrateArgs),
    /// Print the default configuration.
    Config,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Override shots per scan point.
    #[arg(long)]
    shots: Option<u64>,
    /// Disable the state-selective blow-away.
    #[arg(long)]
    no_blowaway: bool,
    /// Read Bell populations from raw θ = 0, π bins instead of the fit.
    #[arg(long)]
    raw_bins: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: Common,
    /// Shot records written by a previous run.
    #[arg(long)]
    input: PathBuf,
    /// Measurement type; inferred from the series names when omitted.
    #[arg(long, value_parser = parse_measurement)]
    measurement: Option<Measurement>,
    #[arg(long)]
    raw_bins: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Target 1/e damping time of the single-atom Rydberg flop.
    #[arg(long, default_value_t = 3.2)]
    tau_us: f64,
    /// Target fitted Rydberg Rabi frequency; pass 0 to keep the drive fixed.
    #[arg(long, default_value_t = 0.73)]
    omega_mhz: f64,
    #[arg(long, default_value_t = 200)]
    trajectories: u64,
    #[arg(long, default_value_t = 0.01)]
    tolerance: f64,
}

fn parse_measurement(s: &str) -> Result<Measurement, String> {
    s.parse().map_err(|e: rydsim_core::Error| e.to_string())
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn load_config(c: &Common) -> AnyResult<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn init_threads(n: usize) -> AnyResult<()> {
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> AnyResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn write_outputs(out: &Path, cfg: &ExperimentConfig, analysis: &Analysis, extra: Option<&Value>) -> AnyResult<()> {
    write_summary(BufWriter::new(File::create(out.join("summary.csv"))?), &analysis.summary)?;
    let mut result = analysis.result.clone();
    if let (Some(obj), Some(extra)) = (result.as_object_mut(), extra) {
        if extra.as_object().is_some_and(|e| !e.is_empty()) {
            obj.insert("diagnostics".into(), extra.clone());
        }
    }
    write_json(&out.join("result.json"), &result)?;
    write_json(&out.join("effective_config.json"), cfg)?;
    Ok(())
}

fn run_measurement(m: Measurement, a: RunArgs) -> AnyResult<()> {
    init_threads(a.common.threads)?;
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.shots {
        cfg.shots_per_point = n;
    }
    if a.no_blowaway {
        cfg.detection.blowaway_enabled = false;
    }
    cfg.validate()?;
    let out = run(m, &cfg, &RunOptions { raw_bins: a.raw_bins })?;
    fs::create_dir_all(&a.common.out)?;
    write_shots(BufWriter::new(File::create(a.common.out.join("shots.csv"))?), &out.records)?;
    write_outputs(&a.common.out, &cfg, &out.analysis, Some(&out.diagnostics))?;
    println!("{}", serde_json::to_string_pretty(&headline(&out.analysis.result))?);
    eprintln!("{} shots written to {}", out.records.len(), a.common.out.display());
    Ok(())
}

/// Result document with the bulky fit diagnostics stripped, for the terminal.
fn headline(v: &Value) -> Value {
    match v {
        Value::Object(o) => Value::Object(
            o.iter()
                .filter(|(k, _)| !k.ends_with("fit") && k.as_str() != "std_error")
                .map(|(k, v)| (k.clone(), headline(v)))
                .collect(),
        ),
        v => v.clone(),
    }
}

fn run_analyze(a: AnalyzeArgs) -> AnyResult<()> {
    init_threads(a.common.threads)?;
    let cfg = load_config(&a.common)?;
    let records = read_shots(BufReader::new(File::open(&a.input)?))?;
    let m = match a.measurement {
        Some(m) => m,
        None => Measurement::from_records(&records)?,
    };
    let analysis = analyze(m, &cfg, &records, &RunOptions { raw_bins: a.raw_bins })?;
    fs::create_dir_all(&a.common.out)?;
    write_outputs(&a.common.out, &cfg, &analysis, None)?;
    println!("{}", serde_json::to_string_pretty(&headline(&analysis.result))?);
    Ok(())
}

fn run_calibrate(a: CalibrateArgs) -> AnyResult<()> {
    init_threads(a.common.threads)?;
    let cfg = load_config(&a.common)?;
    let target = CalibrationTarget {
        tau: a.tau_us * US,
        omega: (a.omega_mhz > 0.0).then_some(TWO_PI * a.omega_mhz * 1e6),
        trajectories: a.trajectories,
        tolerance: a.tolerance,
        ..CalibrationTarget::default()
    };
    let cal = calibrate_phase_noise(&cfg, &target)?;
    let calibrated = cal.apply(&cfg);
    fs::create_dir_all(&a.common.out)?;
    let doc = json!({
        "phase_noise": calibrated.noise.phase,
        "rydberg_rabi_MHz": cal.rydberg_rabi_mhz,
        "fitted_tau_us": cal.tau / US,
        "fitted_omega_MHz": cal.omega / TWO_PI / 1e6,
        "evaluations": cal.evaluations,
        "converged": cal.converged,
    });
    write_json(&a.common.out.join("calibration.json"), &doc)?;
    write_json(&a.common.out.join("effective_config.json"), &calibrated)?;
    println!("{}", serde_json::to_string_pretty(&doc)?);
    if !cal.converged {
        return Err("calibration did not reach the requested tolerance".into());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::RabiGround(a) => run_measurement(Measurement::RabiGround, a),
        Command::RamseyGround(a) => run_measurement(Measurement::RamseyGround, a),
        Command::RabiRydberg(a) => run_measurement(Measurement::RabiRydberg, a),
        Command::RamseyRydberg(a) => run_measurement(Measurement::RamseyRydberg, a),
        Command::Blockade(a) => run_measurement(Measurement::Blockade, a),
        Command::Bell(a) => run_measurement(Measurement::Bell, a),
        Command::Analyze(a) => run_analyze(a),
        Command::Calibrate(a) => run_calibrate(a),
        Command::Config => ExperimentConfig::default()
            .to_json()
            .map(|s| println!("{s}"))
            .map_err(Into::into),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
