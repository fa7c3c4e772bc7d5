//! Experiment configuration: a versioned JSON document with explicit units in
//! every key. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::atom::{BellOptions as SequenceOptions, CollectivePulse, InteractionParams};
use crate::constants::{mhz, US};
use crate::detection::DetectionParams;
use crate::error::{validation, Error, Result};
use crate::noise::{NoiseParams, PhaseNoiseParams, ThermalParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(rename = "temperature_uK")]
    pub temperature_uk: f64,
    pub mass_kg: f64,
    pub k_eff_per_m: f64,
    /// Qubit splitting over effective trap detuning.
    pub light_shift_eta: f64,
    #[serde(rename = "c6_GHz_um6")]
    pub c6_ghz_um6: f64,
    pub separation_um: f64,
    #[serde(rename = "raman_rabi_MHz")]
    pub raman_rabi_mhz: f64,
    #[serde(rename = "rydberg_rabi_MHz")]
    pub rydberg_rabi_mhz: f64,
    pub rydberg_lifetime_us: f64,
    /// Collective Rabi frequency used to time the first Bell pulse; `null`
    /// uses `√2·Ω_r`.
    #[serde(rename = "collective_rabi_MHz")]
    pub collective_rabi_mhz: Option<f64>,
    /// Round pulse durations onto the 25 ns sequencer grid.
    pub hardware_timing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub doppler: bool,
    pub light_shift: bool,
    /// Homogeneous qubit dephasing time; `null` disables it.
    pub ground_echo_t2_s: Option<f64>,
    pub rydberg_decay: bool,
    pub phase: PhaseNoiseParams,
}

/// Uniform grid `start..=stop` with `points` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub start_us: f64,
    pub stop_us: f64,
    pub points: usize,
}

impl TimeGrid {
    /// Grid in seconds.
    pub fn values(&self) -> Vec<f64> {
        linspace(self.start_us * US, self.stop_us * US, self.points)
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamseyGroundScan {
    pub hold_ms: Vec<f64>,
    /// Detuning points across one fringe period at each hold.
    pub detuning_points: usize,
    pub echo_hold_ms: Vec<f64>,
    /// Analysis-phase points across 2π for the echo fringes.
    pub phase_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamseyRydbergScan {
    pub hold_us: Vec<f64>,
    pub phase_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BellScan {
    /// Equally spaced analysis angles over one period.
    pub theta_points: usize,
    pub recap_shots: u64,
    pub bootstrap_resamples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub rabi_ground: TimeGrid,
    pub ramsey_ground: RamseyGroundScan,
    pub rabi_rydberg: TimeGrid,
    pub ramsey_rydberg: RamseyRydbergScan,
    pub blockade: TimeGrid,
    pub bell: BellScan,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub shots_per_point: u64,
    pub physics: PhysicsConfig,
    pub noise: NoiseConfig,
    pub detection: DetectionParams,
    pub scans: ScanConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 1,
            shots_per_point: 250,
            physics: PhysicsConfig {
                temperature_uk: 10.0,
                mass_kg: crate::constants::CS_MASS,
                k_eff_per_m: 5.0e6,
                light_shift_eta: 1.45e-4,
                c6_ghz_um6: -573.0,
                separation_um: 6.0,
                raman_rabi_mhz: 0.75,
                rydberg_rabi_mhz: 0.793,
                rydberg_lifetime_us: 134.0,
                collective_rabi_mhz: None,
                hardware_timing: false,
            },
            noise: NoiseConfig {
                doppler: true,
                light_shift: true,
                ground_echo_t2_s: Some(0.15),
                rydberg_decay: true,
                phase: PhaseNoiseParams::ServoBump { frequency_hz: 3.0e6, amplitude_rad: 0.521, step_s: 1e-8 },
            },
            detection: DetectionParams::default(),
            scans: ScanConfig {
                rabi_ground: TimeGrid { start_us: 0.0, stop_us: 4.0, points: 41 },
                ramsey_ground: RamseyGroundScan {
                    hold_ms: vec![0.5, 2.0, 4.0, 6.0, 8.0, 10.0, 12.5, 15.0, 20.0, 25.0],
                    detuning_points: 8,
                    echo_hold_ms: vec![1.0, 25.0, 50.0, 100.0, 150.0, 200.0, 300.0],
                    phase_points: 8,
                },
                rabi_rydberg: TimeGrid { start_us: 0.0, stop_us: 6.0, points: 49 },
                ramsey_rydberg: RamseyRydbergScan {
                    hold_us: vec![0.5, 2.0, 4.0, 6.0, 8.0, 10.0, 12.5, 15.0, 20.0, 25.0],
                    phase_points: 8,
                },
                blockade: TimeGrid { start_us: 0.0, stop_us: 4.0, points: 41 },
                bell: BellScan { theta_points: 16, recap_shots: 250, bootstrap_resamples: 1000 },
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Validation(format!("{}: {j}", path.display())),
            e => e,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(validation(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.shots_per_point == 0 {
            return Err(validation("shots_per_point must be ≥ 1"));
        }
        let p = &self.physics;
        for (name, v) in [
            ("physics.temperature_uK", p.temperature_uk),
            ("physics.mass_kg", p.mass_kg),
            ("physics.separation_um", p.separation_um),
            ("physics.raman_rabi_MHz", p.raman_rabi_mhz),
            ("physics.rydberg_rabi_MHz", p.rydberg_rabi_mhz),
            ("physics.rydberg_lifetime_us", p.rydberg_lifetime_us),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(validation(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(p.k_eff_per_m >= 0.0) || !(p.light_shift_eta >= 0.0) || !p.c6_ghz_um6.is_finite() {
            return Err(validation("physics.k_eff_per_m and light_shift_eta must be ≥ 0, c6 finite"));
        }
        if let Some(w) = p.collective_rabi_mhz {
            if !(w > 0.0) {
                return Err(validation("physics.collective_rabi_MHz must be > 0"));
            }
        }
        self.noise_params().validate()?;
        self.detection.validate()?;
        let s = &self.scans;
        for (name, g) in [("rabi_ground", &s.rabi_ground), ("rabi_rydberg", &s.rabi_rydberg), ("blockade", &s.blockade)] {
            if g.points < 5 || !(g.start_us >= 0.0) || !(g.stop_us > g.start_us) {
                return Err(validation(format!("scans.{name}: need ≥ 5 points and 0 ≤ start_us < stop_us")));
            }
        }
        let holds = |name: &str, v: &[f64]| -> Result<()> {
            if v.len() < 3 || v.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(validation(format!("scans.{name}: need ≥ 3 positive holds")));
            }
            Ok(())
        };
        holds("ramsey_ground.hold_ms", &s.ramsey_ground.hold_ms)?;
        holds("ramsey_ground.echo_hold_ms", &s.ramsey_ground.echo_hold_ms)?;
        holds("ramsey_rydberg.hold_us", &s.ramsey_rydberg.hold_us)?;
        for (name, n) in [
            ("ramsey_ground.detuning_points", s.ramsey_ground.detuning_points),
            ("ramsey_ground.phase_points", s.ramsey_ground.phase_points),
            ("ramsey_rydberg.phase_points", s.ramsey_rydberg.phase_points),
            ("bell.theta_points", s.bell.theta_points),
        ] {
            if n < 4 {
                return Err(validation(format!("scans.{name} must be ≥ 4")));
            }
        }
        if s.bell.recap_shots == 0 {
            return Err(validation("scans.bell.recap_shots must be ≥ 1"));
        }
        Ok(())
    }

    pub fn thermal(&self) -> ThermalParams {
        ThermalParams {
            temperature: self.physics.temperature_uk * 1e-6,
            mass: self.physics.mass_kg,
            k_eff: self.physics.k_eff_per_m,
            eta: self.physics.light_shift_eta,
        }
    }

    pub fn noise_params(&self) -> NoiseParams {
        NoiseParams {
            thermal: self.thermal(),
            doppler: self.noise.doppler,
            lightshift: self.noise.light_shift,
            phase: self.noise.phase,
            ground_echo_t2: self.noise.ground_echo_t2_s,
        }
    }

    pub fn interaction(&self) -> InteractionParams {
        InteractionParams { c6_ghz_um6: self.physics.c6_ghz_um6, separation_um: self.physics.separation_um }
    }

    pub fn raman_rabi(&self) -> f64 {
        mhz(self.physics.raman_rabi_mhz)
    }

    pub fn rydberg_rabi(&self) -> f64 {
        mhz(self.physics.rydberg_rabi_mhz)
    }

    /// Rydberg decay rate, 1/s; zero when decay is disabled.
    pub fn rydberg_decay_rate(&self) -> f64 {
        if self.noise.rydberg_decay {
            1.0 / (self.physics.rydberg_lifetime_us * US)
        } else {
            0.0
        }
    }

    pub fn sequence_options(&self) -> SequenceOptions {
        SequenceOptions {
            collective_pulse: match self.physics.collective_rabi_mhz {
                Some(w) => CollectivePulse::MeasuredCollective(mhz(w)),
                None => CollectivePulse::SqrtTwoSingleAtom,
            },
            hardware_timing: self.physics.hardware_timing,
        }
    }

    /// Every noise source and loss channel switched off, perfect detection.
    pub fn noiseless(mut self) -> Self {
        self.noise.doppler = false;
        self.noise.light_shift = false;
        self.noise.ground_echo_t2_s = None;
        self.noise.rydberg_decay = false;
        self.noise.phase = PhaseNoiseParams::Off;
        self.detection = DetectionParams { blowaway_enabled: self.detection.blowaway_enabled, ..DetectionParams::ideal() };
        self
    }
}
