//! Drive parameters, Van der Waals interaction and pulse sequences.
//!
//! All drives are effective two-photon couplings in the rotating frame of
//! their laser: a drive on `lower → upper` contributes `(Ω/2)e^{iφ}` between
//! the two levels and `−δ` on the upper level. A drive with `rabi = 0`
//! still carries its frame detuning, which is how free evolution between
//! Ramsey pulses accumulates phase.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::constants::{NS, TWO_PI};
use crate::error::{domain, validation, Result};
use crate::hamiltonian::{Builder, Hamiltonian};
use crate::state::{Atom, Level};
use crate::C64;

/// Pulse timing resolution of the acousto-optic switches.
pub const TIMING_RESOLUTION: f64 = 25.0 * NS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transition {
    /// Ground-state Raman transition `|0⟩ ↔ |1⟩`.
    Raman01,
    /// Two-photon Rydberg excitation `|1⟩ ↔ |r⟩`.
    Rydberg1r,
}

impl Transition {
    pub fn lower(self) -> Level {
        match self {
            Transition::Raman01 => Level::Zero,
            Transition::Rydberg1r => Level::One,
        }
    }

    pub fn upper(self) -> Level {
        match self {
            Transition::Raman01 => Level::One,
            Transition::Rydberg1r => Level::Rydberg,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Atom1,
    Atom2,
    Both,
}

impl Target {
    pub fn includes(self, atom: Atom) -> bool {
        matches!(
            (self, atom),
            (Target::Both, _) | (Target::Atom1, Atom::First) | (Target::Atom2, Atom::Second)
        )
    }

    pub fn atoms(self) -> impl Iterator<Item = Atom> {
        Atom::BOTH.into_iter().filter(move |a| self.includes(*a))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub transition: Transition,
    /// Rabi frequency Ω in rad/s.
    pub rabi: f64,
    /// Two-photon detuning δ in rad/s.
    pub detuning: f64,
    /// Laser phase in rad.
    pub phase: f64,
    pub target: Target,
}

impl DriveParams {
    pub fn new(transition: Transition, rabi: f64, target: Target) -> Self {
        DriveParams { transition, rabi, detuning: 0.0, phase: 0.0, target }
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.detuning = detuning;
        self
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    /// Laser off, frame detuning retained.
    pub fn frame(transition: Transition, detuning: f64, target: Target) -> Self {
        DriveParams { transition, rabi: 0.0, detuning, phase: 0.0, target }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rabi >= 0.0 && self.rabi.is_finite()) {
            return Err(validation(format!("rabi frequency must be finite and ≥ 0, got {}", self.rabi)));
        }
        if !self.detuning.is_finite() || !self.phase.is_finite() {
            return Err(validation("drive detuning and phase must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    /// Signed dispersion coefficient C₆ in GHz·μm⁶.
    pub c6_ghz_um6: f64,
    /// Interatomic separation R in μm.
    pub separation_um: f64,
}

/// `V(R) = −C₆/R⁶` as an angular frequency (rad/s), sign preserved.
pub fn vdw_shift(p: &InteractionParams) -> Result<f64> {
    if !(p.separation_um > 0.0 && p.separation_um.is_finite()) {
        return Err(domain(format!("separation must be > 0, got {} μm", p.separation_um)));
    }
    Ok(TWO_PI * 1e9 * (-p.c6_ghz_um6) / p.separation_um.powi(6))
}

/// `R_b = (|C₆|/Ω)^{1/6}` in μm, with C₆ in GHz·μm⁶ and Ω in rad/s.
pub fn blockade_radius(c6_ghz_um6: f64, rabi: f64) -> Result<f64> {
    if !(rabi > 0.0) {
        return Err(domain(format!("rabi frequency must be > 0, got {rabi}")));
    }
    Ok((TWO_PI * 1e9 * c6_ghz_um6.abs() / rabi).powf(1.0 / 6.0))
}

/// Builds the two-atom Hamiltonian for a set of drives plus the `|rr⟩` shift.
///
/// At most one drive per transition per atom is allowed.
pub fn build_hamiltonian(drives: &[DriveParams], interaction: &InteractionParams) -> Result<Hamiltonian> {
    let v = vdw_shift(interaction)?;
    check_drive_conflicts(drives)?;
    let mut b = Builder::new();
    for d in drives {
        add_drive(&mut b, d, d.target, 0.0, 0.0);
    }
    b.interaction(v);
    Ok(b.hamiltonian())
}

pub(crate) fn check_drive_conflicts(drives: &[DriveParams]) -> Result<()> {
    for d in drives {
        d.validate()?;
    }
    for (i, a) in drives.iter().enumerate() {
        for b in &drives[i + 1..] {
            if a.transition == b.transition && Atom::BOTH.iter().any(|x| a.target.includes(*x) && b.target.includes(*x)) {
                return Err(validation(format!(
                    "conflicting {:?} drives on the same atom",
                    a.transition
                )));
            }
        }
    }
    Ok(())
}

/// Adds `d` restricted to `target`, with extra phase and detuning offsets.
pub(crate) fn add_drive(b: &mut Builder, d: &DriveParams, target: Target, extra_phase: f64, extra_detuning: f64) {
    let coupling = C64::from_polar(0.5 * d.rabi, d.phase + extra_phase);
    for atom in target.atoms() {
        b.coupling(atom, d.transition.lower(), d.transition.upper(), coupling);
        b.level_shift(atom, d.transition.upper(), -(d.detuning + extra_detuning));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub drives: Vec<DriveParams>,
    /// Duration in seconds.
    pub duration: f64,
    /// Whether the tweezer is on (differential light shift active).
    #[serde(default)]
    pub trap_on: bool,
}

impl Segment {
    pub fn new(drives: Vec<DriveParams>, duration: f64) -> Self {
        Segment { drives, duration, trap_on: false }
    }

    pub fn idle(duration: f64) -> Self {
        Segment::new(Vec::new(), duration)
    }

    pub fn in_trap(mut self) -> Self {
        self.trap_on = true;
        self
    }

    pub fn drives_transition(&self, t: Transition) -> bool {
        self.drives.iter().any(|d| d.transition == t && d.rabi > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PulseSequence {
    pub segments: Vec<Segment>,
}

impl PulseSequence {
    pub fn new(segments: Vec<Segment>) -> Self {
        PulseSequence { segments }
    }

    pub fn push(&mut self, s: Segment) -> &mut Self {
        self.segments.push(s);
        self
    }

    pub fn extend(&mut self, other: PulseSequence) -> &mut Self {
        self.segments.extend(other.segments);
        self
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration >= 0.0 && s.duration.is_finite()) {
                return Err(validation(format!("segment {i} has invalid duration {}", s.duration)));
            }
            check_drive_conflicts(&s.drives)?;
        }
        Ok(())
    }

    /// Rounds every duration to the nearest multiple of `grid`.
    pub fn rounded_to(mut self, grid: f64) -> Self {
        for s in &mut self.segments {
            s.duration = (s.duration / grid).round() * grid;
        }
        self
    }

    pub fn on_timing_grid(&self) -> bool {
        self.segments.iter().all(|s| {
            let n = s.duration / TIMING_RESOLUTION;
            (n - n.round()).abs() < 1e-6
        })
    }
}

/// How the first (π/√2) pulse of the entangling sequence is timed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectivePulse {
    /// Duration `π/(√2·Ω_r)`: a π-pulse at the ideal blockade rate.
    SqrtTwoSingleAtom,
    /// Duration `π/Ω′` from a measured collective Rabi frequency (rad/s).
    MeasuredCollective(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellOptions {
    pub collective_pulse: CollectivePulse,
    /// Round durations onto the 25 ns timing grid.
    pub hardware_timing: bool,
}

impl Default for BellOptions {
    fn default() -> Self {
        BellOptions { collective_pulse: CollectivePulse::SqrtTwoSingleAtom, hardware_timing: false }
    }
}

/// Entangling sequence `|11⟩ → |W⟩ → (|0r⟩+|r0⟩)/√2 → |Ψ⁺⟩`: Rydberg π/√2,
/// ground-state π, Rydberg π, all on both atoms.
pub fn bell_sequence(rabi_rydberg: f64, rabi_raman: f64) -> Result<PulseSequence> {
    bell_sequence_with(rabi_rydberg, rabi_raman, BellOptions::default())
}

pub fn bell_sequence_with(rabi_rydberg: f64, rabi_raman: f64, opts: BellOptions) -> Result<PulseSequence> {
    if !(rabi_rydberg > 0.0 && rabi_raman > 0.0) {
        return Err(domain("both Rabi frequencies must be > 0"));
    }
    let collective = match opts.collective_pulse {
        CollectivePulse::SqrtTwoSingleAtom => PI / (SQRT_2 * rabi_rydberg),
        CollectivePulse::MeasuredCollective(w) if w > 0.0 => PI / w,
        CollectivePulse::MeasuredCollective(w) => {
            return Err(domain(format!("collective Rabi frequency must be > 0, got {w}")))
        }
    };
    let ryd = DriveParams::new(Transition::Rydberg1r, rabi_rydberg, Target::Both);
    let raman = DriveParams::new(Transition::Raman01, rabi_raman, Target::Both);
    let seq = PulseSequence::new(vec![
        Segment::new(vec![ryd], collective),
        Segment::new(vec![raman], PI / rabi_raman),
        Segment::new(vec![ryd], PI / rabi_rydberg),
    ]);
    Ok(if opts.hardware_timing { seq.rounded_to(TIMING_RESOLUTION) } else { seq })
}

/// Single square pulse of area `rabi·duration`.
pub fn rabi_pulse(transition: Transition, rabi: f64, duration: f64, target: Target) -> PulseSequence {
    PulseSequence::new(vec![Segment::new(vec![DriveParams::new(transition, rabi, target)], duration)])
}

/// Global ground-state analysis rotation of area `theta`.
pub fn analysis_rotation(theta: f64, rabi_raman: f64) -> PulseSequence {
    rabi_pulse(Transition::Raman01, rabi_raman, theta / rabi_raman, Target::Both)
}

/// Ramsey sequence parameters. The frame detuning applies during the pulses
/// and the free evolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ramsey {
    pub transition: Transition,
    pub rabi: f64,
    pub hold: f64,
    pub detuning: f64,
    /// Phase of the closing π/2 pulse.
    pub analysis_phase: f64,
    pub target: Target,
    pub trap_on: bool,
    /// Insert a π pulse at `hold/2`.
    pub echo: bool,
}

impl Ramsey {
    pub fn sequence(&self) -> PulseSequence {
        let half = 0.5 * PI / self.rabi;
        let pulse = |phase: f64, duration: f64| {
            Segment {
                drives: vec![DriveParams::new(self.transition, self.rabi, self.target)
                    .with_detuning(self.detuning)
                    .with_phase(phase)],
                duration,
                trap_on: self.trap_on,
            }
        };
        let wait = |duration: f64| Segment {
            drives: vec![DriveParams::frame(self.transition, self.detuning, self.target)],
            duration,
            trap_on: self.trap_on,
        };
        let mut segs = vec![pulse(0.0, half)];
        if self.echo {
            segs.push(wait(0.5 * self.hold));
            segs.push(pulse(0.0, 2.0 * half));
            segs.push(wait(0.5 * self.hold));
        } else {
            segs.push(wait(self.hold));
        }
        segs.push(pulse(self.analysis_phase, half));
        PulseSequence::new(segs)
    }
}
