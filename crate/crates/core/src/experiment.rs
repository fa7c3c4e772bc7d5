//! The runnable measurements: shot loops, per-point aggregation and fits.
//!
//! Every measurement is split into a simulation step producing
//! [`ShotRecord`]s and an analysis step consuming them. `analyze` applied to
//! the records of a run reproduces the run's result exactly.
//!
//! Shots are numbered globally across all series of a run, in a fixed
//! order; shot `g` draws all of its randomness from stream `g` of the
//! configured seed.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    bell_fidelity, damped_rabi, fit_damped_rabi, fit_ramsey_echo, fit_ramsey_t2star, fringe_visibility_at,
    ramsey_t2star_envelope, BellOptions, FitResult,
};
use crate::atom::{analysis_rotation, bell_sequence_with, rabi_pulse, PulseSequence, Ramsey, Target, Transition};
use crate::config::ExperimentConfig;
use crate::constants::{MS, TWO_PI, US};
use crate::detection::{measure_shot, table_from_records, DetectionParams, ShotRecord};
use crate::error::{validation, Error, Result};
use crate::noise::{NoiseParams, PhaseNoiseParams, ShotContext};
use crate::rng::{self, CALIBRATION_STREAMS};
use crate::state::{basis_index, Atom, Level, TwoAtomState};
use crate::trajectory::{run_trajectory, rydberg_decay, Dynamics, JumpChannel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measurement {
    RabiGround,
    RamseyGround,
    RabiRydberg,
    RamseyRydberg,
    Blockade,
    Bell,
}

impl Measurement {
    pub const ALL: [Measurement; 6] = [
        Measurement::RabiGround,
        Measurement::RamseyGround,
        Measurement::RabiRydberg,
        Measurement::RamseyRydberg,
        Measurement::Blockade,
        Measurement::Bell,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measurement::RabiGround => "rabi-ground",
            Measurement::RamseyGround => "ramsey-ground",
            Measurement::RabiRydberg => "rabi-rydberg",
            Measurement::RamseyRydberg => "ramsey-rydberg",
            Measurement::Blockade => "blockade",
            Measurement::Bell => "bell",
        }
    }

    /// Infers the measurement from shot-record series names.
    pub fn from_records(records: &[ShotRecord]) -> Result<Measurement> {
        let first = records.first().ok_or_else(|| Error::Empty("no shot records".into()))?;
        let prefix = first.series.split('/').next().unwrap_or_default();
        prefix.parse()
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Measurement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Measurement::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| validation(format!("unknown measurement '{s}'")))
    }
}

/// One plot-ready row: scan coordinate, observable, its error, fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub yerr: f64,
    pub fit_y: Option<f64>,
}

pub fn write_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["series", "x", "y", "yerr", "fit_y"])?;
    for r in rows {
        wr.write_record([
            r.series.clone(),
            r.x.to_string(),
            r.y.to_string(),
            r.yerr.to_string(),
            r.fit_y.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Bell analysis reads `P₀₀`, `P₁₁` from raw bins.
    pub raw_bins: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub summary: Vec<SummaryRow>,
    pub result: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub records: Vec<ShotRecord>,
    pub analysis: Analysis,
    /// Quantities only available from the simulated states.
    pub diagnostics: Value,
}

/// A scan point: coordinates, pulse sequence, and whether trap 2 is loaded.
#[derive(Clone, Debug)]
pub struct Point {
    pub x: f64,
    pub inner: Option<f64>,
    pub sequence: PulseSequence,
    pub pair: bool,
}

/// Shared per-run simulation state.
pub struct Simulator<'a> {
    cfg: &'a ExperimentConfig,
    noise: NoiseParams,
    interaction: f64,
    channels: Vec<JumpChannel>,
}

/// End of the last segment that drives the Rydberg transition.
fn rydberg_horizon(seq: &PulseSequence) -> f64 {
    let mut t = 0.0;
    let mut end = 0.0;
    for s in &seq.segments {
        t += s.duration;
        if s.drives_transition(Transition::Rydberg1r) {
            end = t;
        }
    }
    end
}

fn initial_state(pair: bool) -> TwoAtomState {
    if pair {
        TwoAtomState::ground_pair()
    } else {
        TwoAtomState::single_atom(Level::One)
    }
}

/// Probability that atom 1 reads absent under ideal Rydberg ejection and
/// no blow-away.
fn absent_probability(s: &TwoAtomState) -> f64 {
    if s.is_lost(Atom::First) {
        1.0
    } else {
        s.level_population(Atom::First, Level::Rydberg)
    }
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let interaction = crate::atom::vdw_shift(&cfg.interaction())?;
        let rate = cfg.rydberg_decay_rate();
        let channels = if rate > 0.0 { rydberg_decay(rate) } else { Vec::new() };
        Ok(Simulator { cfg, noise: cfg.noise_params(), interaction, channels })
    }

    pub fn config(&self) -> &ExperimentConfig {
        self.cfg
    }

    fn dynamics(&self, context: ShotContext) -> Dynamics {
        Dynamics { interaction: self.interaction, channels: self.channels.clone(), context, noise_step: self.noise.phase.step() }
    }

    /// Simulates one shot and returns the final state.
    pub fn evolve<R: rand::Rng + ?Sized>(&self, p: &Point, eta_op: f64, rng: &mut R) -> Result<TwoAtomState> {
        let ctx = ShotContext::sample(&self.noise, eta_op, rydberg_horizon(&p.sequence), rng);
        run_trajectory(&initial_state(p.pair), &p.sequence, &self.dynamics(ctx), rng)
    }

    /// Runs `shots` shots at every point, numbering them from `*counter`.
    pub fn shots(
        &self,
        series: &str,
        points: &[Point],
        shots: u64,
        det: &DetectionParams,
        counter: &mut u64,
    ) -> Result<Vec<ShotRecord>> {
        let mut out = Vec::with_capacity(points.len() * shots as usize);
        for p in points {
            let base = *counter;
            *counter += shots;
            let recs: Vec<ShotRecord> = (0..shots)
                .into_par_iter()
                .map(|k| {
                    let g = base + k;
                    let mut r = rng::stream(self.cfg.seed, g);
                    let s = self.evolve(p, det.eta_op, &mut r)?;
                    Ok(ShotRecord::new(series, g, &measure_shot(&s, det, p.x, &mut r), p.inner))
                })
                .collect::<Result<_>>()?;
            out.extend(recs);
        }
        Ok(out)
    }

    /// Ensemble mean of a final-state observable over `trajectories`
    /// realizations, using streams `stream_base + k`.
    pub fn expectation<F>(&self, p: &Point, trajectories: u64, stream_base: u64, f: F) -> Result<f64>
    where
        F: Fn(&TwoAtomState) -> f64 + Sync,
    {
        let vals: Vec<f64> = (0..trajectories)
            .into_par_iter()
            .map(|k| {
                let mut r = rng::stream(self.cfg.seed, stream_base + k);
                self.evolve(p, 1.0, &mut r).map(|s| f(&s))
            })
            .collect::<Result<_>>()?;
        Ok(vals.iter().sum::<f64>() / trajectories as f64)
    }
}

fn single_series(m: Measurement) -> String {
    m.name().to_string()
}

fn series(m: Measurement, sub: &str) -> String {
    format!("{}/{sub}", m.name())
}

fn no_blowaway(d: &DetectionParams) -> DetectionParams {
    DetectionParams { blowaway_enabled: false, ..*d }
}

/// `4τ/π` Ramsey-time correction for square π/2 pulses of duration `τ`.
fn ramsey_effective_time(hold: f64, rabi: f64) -> f64 {
    hold + 4.0 * (0.5 * PI / rabi) / PI
}

pub fn rabi_points(transition: Transition, rabi: f64, times: &[f64], target: Target, pair: bool) -> Vec<Point> {
    times
        .iter()
        .map(|&t| Point { x: t, inner: None, sequence: rabi_pulse(transition, rabi, t, target), pair })
        .collect()
}

pub fn ramsey_ground_points(cfg: &ExperimentConfig) -> Vec<Point> {
    let sc = &cfg.scans.ramsey_ground;
    let mut pts = Vec::new();
    for &h in &sc.hold_ms {
        let hold = h * MS;
        let k = ramsey_effective_time(hold, cfg.raman_rabi());
        for j in 0..sc.detuning_points {
            let delta = TWO_PI * j as f64 / (sc.detuning_points as f64 * k);
            let r = Ramsey {
                transition: Transition::Raman01,
                rabi: cfg.raman_rabi(),
                hold,
                detuning: delta,
                analysis_phase: 0.0,
                target: Target::Atom1,
                trap_on: true,
                echo: false,
            };
            pts.push(Point { x: hold, inner: Some(delta), sequence: r.sequence(), pair: false });
        }
    }
    pts
}

fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| TWO_PI * j as f64 / n as f64).collect()
}

pub fn ramsey_echo_points(cfg: &ExperimentConfig) -> Vec<Point> {
    let sc = &cfg.scans.ramsey_ground;
    let mut pts = Vec::new();
    for &h in &sc.echo_hold_ms {
        for phi in phase_grid(sc.phase_points) {
            let r = Ramsey {
                transition: Transition::Raman01,
                rabi: cfg.raman_rabi(),
                hold: h * MS,
                detuning: 0.0,
                analysis_phase: phi,
                target: Target::Atom1,
                trap_on: true,
                echo: true,
            };
            pts.push(Point { x: h * MS, inner: Some(phi), sequence: r.sequence(), pair: false });
        }
    }
    pts
}

pub fn ramsey_rydberg_points(cfg: &ExperimentConfig) -> Vec<Point> {
    let sc = &cfg.scans.ramsey_rydberg;
    let mut pts = Vec::new();
    for &h in &sc.hold_us {
        for phi in phase_grid(sc.phase_points) {
            let r = Ramsey {
                transition: Transition::Rydberg1r,
                rabi: cfg.rydberg_rabi(),
                hold: h * US,
                detuning: 0.0,
                analysis_phase: phi,
                target: Target::Atom1,
                trap_on: false,
                echo: false,
            };
            pts.push(Point { x: h * US, inner: Some(phi), sequence: r.sequence(), pair: false });
        }
    }
    pts
}

pub fn bell_thetas(n: usize) -> Vec<f64> {
    (0..n).map(|k| TWO_PI * k as f64 / n as f64).collect()
}

pub fn bell_points(cfg: &ExperimentConfig) -> Result<Vec<Point>> {
    let base = bell_sequence_with(cfg.rydberg_rabi(), cfg.raman_rabi(), cfg.sequence_options())?;
    Ok(bell_thetas(cfg.scans.bell.theta_points)
        .into_iter()
        .map(|theta| {
            let mut seq = base.clone();
            seq.extend(analysis_rotation(theta, cfg.raman_rabi()));
            Point { x: theta, inner: None, sequence: seq, pair: true }
        })
        .collect())
}

pub fn bell_recap_point(cfg: &ExperimentConfig) -> Result<Point> {
    let seq = bell_sequence_with(cfg.rydberg_rabi(), cfg.raman_rabi(), cfg.sequence_options())?;
    Ok(Point { x: 0.0, inner: None, sequence: seq, pair: true })
}

/// Simulates and analyses one measurement.
pub fn run(m: Measurement, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    let sim = Simulator::new(cfg)?;
    let n = cfg.shots_per_point;
    let det = cfg.detection;
    let mut counter = 0u64;
    let mut records = Vec::new();
    let mut diagnostics = json!({});
    match m {
        Measurement::RabiGround => {
            let pts = rabi_points(Transition::Raman01, cfg.raman_rabi(), &cfg.scans.rabi_ground.values(), Target::Atom1, false);
            records = sim.shots(&single_series(m), &pts, n, &det, &mut counter)?;
        }
        Measurement::RamseyGround => {
            records.extend(sim.shots(&series(m, "t2star"), &ramsey_ground_points(cfg), n, &det, &mut counter)?);
            records.extend(sim.shots(&series(m, "echo"), &ramsey_echo_points(cfg), n, &det, &mut counter)?);
        }
        Measurement::RabiRydberg => {
            let pts = rabi_points(Transition::Rydberg1r, cfg.rydberg_rabi(), &cfg.scans.rabi_rydberg.values(), Target::Atom1, false);
            records = sim.shots(&single_series(m), &pts, n, &no_blowaway(&det), &mut counter)?;
        }
        Measurement::RamseyRydberg => {
            records = sim.shots(&single_series(m), &ramsey_rydberg_points(cfg), n, &no_blowaway(&det), &mut counter)?;
        }
        Measurement::Blockade => {
            let times = cfg.scans.blockade.values();
            let single = rabi_points(Transition::Rydberg1r, cfg.rydberg_rabi(), &times, Target::Atom1, false);
            let pair = rabi_points(Transition::Rydberg1r, cfg.rydberg_rabi(), &times, Target::Both, true);
            records.extend(sim.shots(&series(m, "single"), &single, n, &no_blowaway(&det), &mut counter)?);
            records.extend(sim.shots(&series(m, "pair"), &pair, n, &no_blowaway(&det), &mut counter)?);
            let rr = basis_index(Level::Rydberg, Level::Rydberg);
            let prr: Vec<f64> = pair
                .iter()
                .map(|p| sim.expectation(p, 64, CALIBRATION_STREAMS, |s| s.populations()[rr]))
                .collect::<Result<_>>()?;
            diagnostics = json!({ "max_rr_population": prr.iter().copied().fold(0.0, f64::max) });
        }
        Measurement::Bell => {
            if det.blowaway_enabled {
                records.extend(sim.shots(&series(m, "scan"), &bell_points(cfg)?, n, &det, &mut counter)?);
            }
            let recap = bell_recap_point(cfg)?;
            records.extend(sim.shots(&series(m, "recap"), &[recap], cfg.scans.bell.recap_shots, &no_blowaway(&det), &mut counter)?);
        }
    }
    let analysis = analyze(m, cfg, &records, opts)?;
    Ok(RunOutput { records, analysis, diagnostics })
}

fn binomial_error(p: f64, n: f64) -> f64 {
    (p * (1.0 - p) / n).sqrt()
}

/// Per-scan-value fractions of one series: `(x, y, yerr)`.
fn curve(records: &[ShotRecord], series: &str, y: impl Fn(&crate::detection::Counts) -> f64) -> Result<Vec<(f64, f64, f64)>> {
    let t = table_from_records(records, series)?;
    Ok(t.rows()
        .map(|(x, c)| {
            let v = y(c);
            (x, v, binomial_error(v, c.total() as f64))
        })
        .collect())
}

fn rabi_rows(series: &str, pts: &[(f64, f64, f64)], fit: &FitResult) -> Vec<SummaryRow> {
    pts.iter()
        .map(|&(x, y, e)| SummaryRow {
            series: series.to_string(),
            x,
            y,
            yerr: e,
            fit_y: Some(damped_rabi(x, fit.params[0], fit.params[1], fit.params[2], fit.params[3])),
        })
        .collect()
}

fn fit_curve(pts: &[(f64, f64, f64)]) -> Result<FitResult> {
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    fit_damped_rabi(&x, &y, None)
}

fn rabi_json(fit: &FitResult) -> Value {
    json!({
        "omega_MHz": fit.params[0] / TWO_PI / 1e6,
        "omega_MHz_err": fit.std_errors[0] / TWO_PI / 1e6,
        "tau_us": fit.params[1] / US,
        "tau_us_err": fit.std_errors[1] / US,
        "fit": fit,
    })
}

/// Visibility per hold from fringe sub-scans keyed by `inner_value`.
fn visibility_curve(records: &[ShotRecord], series: &str, absent: bool, k_of: impl Fn(f64) -> f64) -> Result<Vec<(f64, f64, f64)>> {
    let sel: Vec<&ShotRecord> = records.iter().filter(|r| r.series == series).collect();
    if sel.is_empty() {
        return Err(Error::Empty(format!("no shots in series '{series}'")));
    }
    let mut holds: Vec<f64> = sel.iter().map(|r| r.scan_value).collect();
    holds.sort_by(f64::total_cmp);
    holds.dedup();
    let mut out = Vec::new();
    for h in holds {
        let sub: Vec<ShotRecord> = sel
            .iter()
            .filter(|r| r.scan_value == h)
            .map(|r| ShotRecord { scan_value: r.inner_value.unwrap_or(0.0), ..(*r).clone() })
            .collect();
        let t = table_from_records(&sub, series)?;
        let (xs, ys): (Vec<f64>, Vec<f64>) = t
            .rows()
            .map(|(x, c)| (x, if absent { 1.0 - c.fraction_present(0) } else { c.fraction_present(0) }))
            .unzip();
        let v = fringe_visibility_at(&xs, &ys, None, k_of(h))?;
        out.push((h, v.visibility, if v.std_error.is_finite() { v.std_error } else { 0.0 }));
    }
    Ok(out)
}

fn envelope_rows(series: &str, pts: &[(f64, f64, f64)], model: impl Fn(f64) -> f64) -> Vec<SummaryRow> {
    pts.iter()
        .map(|&(x, y, e)| SummaryRow { series: series.to_string(), x, y, yerr: e, fit_y: Some(model(x)) })
        .collect()
}

fn split(pts: &[(f64, f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    (pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect())
}

/// Analyses shot records of measurement `m`.
pub fn analyze(m: Measurement, cfg: &ExperimentConfig, records: &[ShotRecord], opts: &RunOptions) -> Result<Analysis> {
    match m {
        Measurement::RabiGround | Measurement::RabiRydberg => {
            let s = single_series(m);
            let absent = m == Measurement::RabiRydberg;
            let pts = curve(records, &s, |c| if absent { 1.0 - c.fraction_present(0) } else { c.fraction_present(0) })?;
            let fit = fit_curve(&pts)?;
            Ok(Analysis { summary: rabi_rows(&s, &pts, &fit), result: json!({ "measurement": m.name(), "rabi": rabi_json(&fit) }) })
        }
        Measurement::RamseyGround => {
            let (s1, s2) = (series(m, "t2star"), series(m, "echo"));
            let rabi = cfg.raman_rabi();
            let t2s = visibility_curve(records, &s1, false, |h| ramsey_effective_time(h, rabi))?;
            let (x, y) = split(&t2s);
            let f1 = fit_ramsey_t2star(&x, &y, None, true)?;
            let echo = visibility_curve(records, &s2, false, |_| 1.0)?;
            let (xe, ye) = split(&echo);
            let f2 = fit_ramsey_echo(&xe, &ye, None)?;
            let mut summary = envelope_rows(&s1, &t2s, |t| f1.params[1] * ramsey_t2star_envelope(t, f1.params[0]));
            summary.extend(envelope_rows(&s2, &echo, |t| f2.params[0] * (-t / f2.params[1]).exp()));
            let p = cfg.thermal();
            let predicted = crate::noise::temp_limited_t2star(&p).ok();
            Ok(Analysis {
                summary,
                result: json!({
                    "measurement": m.name(),
                    "t2star_ms": f1.params[0] / MS,
                    "t2star_ms_err": f1.std_errors[0] / MS,
                    "t2star_predicted_ms": predicted.map(|v| v / MS),
                    "t2_echo_s": f2.params[1],
                    "t2_echo_s_err": f2.std_errors[1],
                    "t2star_fit": f1,
                    "echo_fit": f2,
                }),
            })
        }
        Measurement::RamseyRydberg => {
            let s = single_series(m);
            let pts = visibility_curve(records, &s, true, |_| 1.0)?;
            let (x, y) = split(&pts);
            let f = fit_ramsey_t2star(&x, &y, None, true)?;
            let doppler = crate::noise::doppler_t2star(&cfg.thermal()).ok();
            Ok(Analysis {
                summary: envelope_rows(&s, &pts, |t| f.params[1] * ramsey_t2star_envelope(t, f.params[0])),
                result: json!({
                    "measurement": m.name(),
                    "t2star_us": f.params[0] / US,
                    "t2star_us_err": f.std_errors[0] / US,
                    "doppler_formula_us": doppler.map(|v| v / US),
                    "fit": f,
                }),
            })
        }
        Measurement::Blockade => {
            let (s1, s2) = (series(m, "single"), series(m, "pair"));
            let single = curve(records, &s1, |c| 1.0 - c.fraction_present(0))?;
            let pair = curve(records, &s2, |c| 1.0 - c.fraction_both())?;
            let (f1, f2) = (fit_curve(&single)?, fit_curve(&pair)?);
            let ratio = f2.params[0] / f1.params[0];
            let ratio_err = ratio * ((f1.std_errors[0] / f1.params[0]).powi(2) + (f2.std_errors[0] / f2.params[0]).powi(2)).sqrt();
            let mut summary = rabi_rows(&s1, &single, &f1);
            summary.extend(rabi_rows(&s2, &pair, &f2));
            Ok(Analysis {
                summary,
                result: json!({
                    "measurement": m.name(),
                    "single": rabi_json(&f1),
                    "pair": rabi_json(&f2),
                    "ratio": ratio,
                    "ratio_err": ratio_err,
                }),
            })
        }
        Measurement::Bell => analyze_bell(cfg, records, opts),
    }
}

fn analyze_bell(cfg: &ExperimentConfig, records: &[ShotRecord], opts: &RunOptions) -> Result<Analysis> {
    let m = Measurement::Bell;
    let recap = table_from_records(records, &series(m, "recap"))?;
    let p_recap = crate::detection::recapture_probability(&recap)?;
    let p_recap_err = binomial_error(p_recap, recap.totals().total() as f64);
    if !records.iter().any(|r| r.series == series(m, "scan")) {
        return Ok(Analysis {
            summary: vec![SummaryRow { series: series(m, "recap"), x: 0.0, y: p_recap, yerr: p_recap_err, fit_y: None }],
            result: json!({
                "measurement": m.name(),
                "p_recap": p_recap,
                "p_recap_err": p_recap_err,
                "note": "no blow-away scan recorded; fidelity not evaluated",
            }),
        });
    }
    let scan = table_from_records(records, &series(m, "scan"))?;
    let bopts = BellOptions {
        resamples: cfg.scans.bell.bootstrap_resamples,
        raw_bins: opts.raw_bins,
        weighted: true,
        seed: cfg.seed,
    };
    let est = bell_fidelity(&scan, &recap, &bopts)?;
    let v = est.value;
    let (a0, a1, a2) = (v.mean_both, (v.p00 - v.p11) / 2.0, (v.p00 + v.p11) / 2.0 - v.mean_both);
    let mut summary = Vec::new();
    for (theta, c) in scan.rows() {
        let n = c.total() as f64;
        let pb = c.fraction_both();
        let par = 1.0 - 2.0 * c.fraction_present(0) - 2.0 * c.fraction_present(1) + 4.0 * pb;
        summary.push(SummaryRow {
            series: series(m, "parity"),
            x: theta,
            y: par,
            yerr: ((1.0 - par * par).max(0.0) / n).sqrt(),
            fit_y: Some(v.parity_p0 + v.parity_a * theta.cos() + v.parity_b * (2.0 * theta).cos()),
        });
    }
    for (theta, c) in scan.rows() {
        let pb = c.fraction_both();
        summary.push(SummaryRow {
            series: series(m, "both"),
            x: theta,
            y: pb,
            yerr: binomial_error(pb, c.total() as f64),
            fit_y: (!opts.raw_bins).then(|| a0 + a1 * theta.cos() + a2 * (2.0 * theta).cos()),
        });
    }
    Ok(Analysis {
        summary,
        result: json!({
            "measurement": m.name(),
            "bell": est,
            "p_recap_err_binomial": p_recap_err,
        }),
    })
}

/// Result of tuning phase noise and drive strength to a measured flop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Servo-bump amplitude (rad) or white-frequency linewidth (Hz).
    pub strength: f64,
    /// Bare Rydberg Rabi frequency, MHz.
    #[serde(rename = "rydberg_rabi_MHz")]
    pub rydberg_rabi_mhz: f64,
    /// Fitted damping time, s.
    pub tau: f64,
    /// Fitted angular Rabi frequency, rad/s.
    pub omega: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl Calibration {
    /// `cfg` with the calibrated noise strength and Rabi frequency.
    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        c.noise.phase = cfg.noise.phase.with_strength(self.strength);
        c.physics.rydberg_rabi_mhz = self.rydberg_rabi_mhz;
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationTarget {
    /// 1/e damping time of the single-atom Rydberg flop, s.
    pub tau: f64,
    /// Fitted Rabi frequency, rad/s; `None` leaves the drive untouched.
    pub omega: Option<f64>,
    pub trajectories: u64,
    /// Relative tolerance on both targets.
    pub tolerance: f64,
    pub max_evaluations: usize,
}

impl Default for CalibrationTarget {
    fn default() -> Self {
        CalibrationTarget { tau: 3.2 * US, omega: Some(TWO_PI * 0.73e6), trajectories: 200, tolerance: 0.01, max_evaluations: 30 }
    }
}

/// Single-atom Rydberg flop, ensemble-averaged absent probability.
pub fn rydberg_flop_expectation(cfg: &ExperimentConfig, trajectories: u64) -> Result<Vec<(f64, f64)>> {
    let sim = Simulator::new(cfg)?;
    let times = cfg.scans.rabi_rydberg.values();
    let pts = rabi_points(Transition::Rydberg1r, cfg.rydberg_rabi(), &times, Target::Atom1, false);
    pts.iter()
        .map(|p| Ok((p.x, sim.expectation(p, trajectories, CALIBRATION_STREAMS, absent_probability)?)))
        .collect()
}

/// Damped-Rabi fit of the ensemble-averaged single-atom Rydberg flop.
pub fn rydberg_flop_fit(cfg: &ExperimentConfig, trajectories: u64) -> Result<FitResult> {
    let curve = rydberg_flop_expectation(cfg, trajectories)?;
    let (t, p): (Vec<f64>, Vec<f64>) = curve.into_iter().unzip();
    fit_damped_rabi(&t, &p, None)
}

/// Tunes the phase-noise strength so the single-atom Rydberg flop damps
/// with the target time and, optionally, the bare Rabi frequency so the
/// fitted one matches. Every evaluation reuses the same random streams.
///
/// Damping rate scales as strength² for the servo bump and linearly for
/// white frequency noise; the update is the corresponding fixed-point step.
pub fn calibrate_phase_noise(cfg: &ExperimentConfig, target: &CalibrationTarget) -> Result<Calibration> {
    if !(target.tau > 0.0) || target.omega.is_some_and(|w| !(w > 0.0)) {
        return Err(validation("calibration targets must be > 0"));
    }
    if target.trajectories == 0 {
        return Err(validation("calibration needs at least one trajectory"));
    }
    let exponent = match cfg.noise.phase {
        PhaseNoiseParams::Off => return Err(validation("phase noise model is 'off'; nothing to calibrate")),
        PhaseNoiseParams::ServoBump { .. } => 0.5,
        PhaseNoiseParams::WhiteFrequency { .. } => 1.0,
    };
    let mut c = cfg.clone();
    if c.noise.phase.strength() <= 0.0 {
        c.noise.phase = c.noise.phase.with_strength(if exponent == 0.5 { 0.1 } else { 1e4 });
    }
    let mut evaluations = 0;
    loop {
        let f = rydberg_flop_fit(&c, target.trajectories)?;
        evaluations += 1;
        let (omega, tau) = (f.params[0], f.params[1]);
        let tau_ok = (tau / target.tau - 1.0).abs() <= target.tolerance;
        let omega_ok = target.omega.is_none_or(|w| (omega / w - 1.0).abs() <= target.tolerance);
        let done = tau_ok && omega_ok;
        if done || evaluations >= target.max_evaluations {
            return Ok(Calibration {
                strength: c.noise.phase.strength(),
                rydberg_rabi_mhz: c.physics.rydberg_rabi_mhz,
                tau,
                omega,
                evaluations,
                converged: done,
            });
        }
        let factor = (tau / target.tau).powf(exponent).clamp(0.5, 2.0);
        c.noise.phase = c.noise.phase.with_strength(c.noise.phase.strength() * factor);
        if let Some(w) = target.omega {
            c.physics.rydberg_rabi_mhz *= (w / omega).clamp(0.8, 1.25);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atom::bell_sequence;
    use crate::config::TimeGrid;
    use crate::constants::mhz;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.shots_per_point = 20;
        c.scans.rabi_ground = TimeGrid { start_us: 0.0, stop_us: 3.0, points: 13 };
        c.scans.rabi_rydberg = TimeGrid { start_us: 0.0, stop_us: 3.0, points: 13 };
        c.scans.bell.theta_points = 8;
        c.scans.bell.recap_shots = 50;
        c.scans.bell.bootstrap_resamples = 50;
        c
    }

    #[test]
    fn measurement_names_round_trip() {
        for m in Measurement::ALL {
            assert_eq!(m.name().parse::<Measurement>().unwrap(), m);
        }
        assert!("ramsey".parse::<Measurement>().is_err());
    }

    #[test]
    fn horizon_stops_at_last_rydberg_pulse() {
        let mut seq = bell_sequence(mhz(0.73), mhz(0.75)).unwrap();
        let h = seq.total_duration();
        seq.extend(analysis_rotation(PI, mhz(0.75)));
        assert!((rydberg_horizon(&seq) - h).abs() < 1e-15);
        assert_eq!(rydberg_horizon(&rabi_pulse(Transition::Raman01, 1e6, 1e-6, Target::Atom1)), 0.0);
    }

    #[test]
    fn ground_detuning_grid_spans_one_fringe() {
        let cfg = ExperimentConfig::default();
        let pts = ramsey_ground_points(&cfg);
        let n = cfg.scans.ramsey_ground.detuning_points;
        assert_eq!(pts.len(), n * cfg.scans.ramsey_ground.hold_ms.len());
        let k = ramsey_effective_time(pts[0].x, cfg.raman_rabi());
        let step = pts[1].inner.unwrap() - pts[0].inner.unwrap();
        assert!((step * n as f64 * k - TWO_PI).abs() < 1e-9);
    }

    #[test]
    fn analysis_of_records_reproduces_run() {
        let cfg = small();
        let out = run(Measurement::RabiGround, &cfg, &RunOptions::default()).unwrap();
        assert_eq!(out.records.len(), 13 * 20);
        let again = analyze(Measurement::from_records(&out.records).unwrap(), &cfg, &out.records, &RunOptions::default()).unwrap();
        assert_eq!(again, out.analysis);
    }

    #[test]
    fn shot_numbering_is_global_and_deterministic() {
        let cfg = small();
        let a = run(Measurement::Bell, &cfg, &RunOptions::default()).unwrap();
        let b = run(Measurement::Bell, &cfg, &RunOptions::default()).unwrap();
        assert_eq!(a.records, b.records);
        let shots: Vec<u64> = a.records.iter().map(|r| r.shot).collect();
        assert_eq!(shots, (0..shots.len() as u64).collect::<Vec<_>>());
        assert!(a.records.iter().filter(|r| r.series == "bell/recap").all(|r| r.blowaway == 0));
        assert!(a.records.iter().filter(|r| r.series == "bell/scan").all(|r| r.blowaway == 1));
    }

    #[test]
    fn seed_changes_outcomes() {
        let mut cfg = small();
        let a = run(Measurement::RabiGround, &cfg, &RunOptions::default()).unwrap();
        cfg.seed = 2;
        let b = run(Measurement::RabiGround, &cfg, &RunOptions::default()).unwrap();
        assert_ne!(a.records, b.records);
    }

    #[test]
    fn bell_without_blowaway_records_only_recapture() {
        let mut cfg = small();
        cfg.detection.blowaway_enabled = false;
        let out = run(Measurement::Bell, &cfg, &RunOptions::default()).unwrap();
        assert!(out.records.iter().all(|r| r.series == "bell/recap"));
        assert!(out.analysis.result["p_recap"].as_f64().unwrap() > 0.5);
    }

    #[test]
    fn rydberg_runs_disable_blowaway() {
        let cfg = small();
        let out = run(Measurement::RabiRydberg, &cfg, &RunOptions::default()).unwrap();
        assert!(out.records.iter().all(|r| r.blowaway == 0));
    }

    #[test]
    fn noiseless_ground_flop_fits_drive() {
        let mut cfg = small().noiseless();
        cfg.shots_per_point = 400;
        let out = run(Measurement::RabiGround, &cfg, &RunOptions::default()).unwrap();
        let w = out.analysis.result["rabi"]["omega_MHz"].as_f64().unwrap();
        assert!((w - 0.75).abs() < 0.01, "{w}");
    }

    #[test]
    fn calibration_rejects_disabled_noise() {
        let mut cfg = small();
        cfg.noise.phase = PhaseNoiseParams::Off;
        assert!(calibrate_phase_noise(&cfg, &CalibrationTarget::default()).is_err());
        let bad = CalibrationTarget { tau: -1.0, ..CalibrationTarget::default() };
        assert!(calibrate_phase_noise(&small(), &bad).is_err());
    }

    #[test]
    fn summary_csv_layout() {
        let rows = vec![
            SummaryRow { series: "s".into(), x: 1.0, y: 0.5, yerr: 0.1, fit_y: Some(0.4) },
            SummaryRow { series: "s".into(), x: 2.0, y: 0.5, yerr: 0.1, fit_y: None },
        ];
        let mut buf = Vec::new();
        write_summary(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "series,x,y,yerr,fit_y\ns,1,0.5,0.1,0.4\ns,2,0.5,0.1,\n");
    }

    #[test]
    fn empty_records_are_rejected() {
        assert!(Measurement::from_records(&[]).is_err());
        assert!(analyze(Measurement::Bell, &small(), &[], &RunOptions::default()).is_err());
    }
}
