//! Quantum-jump trajectories through a pulse sequence.
//!
//! Each segment is split into sub-steps. Within a sub-step the generator is
//! constant: drives (with the sampled laser phase at the step midpoint), the
//! per-shot detunings, the `|rr⟩` interaction and, when jump channels are
//! present, the anti-Hermitian decay term `−(i/2)·Σ Γ_k L_k†L_k`. After each
//! sub-step the norm loss is the jump probability; on a jump the channel is
//! picked with weight `Γ_k‖L_k ψ‖²` and the atom is removed from the
//! dynamics for the rest of the shot.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::atom::{add_drive, PulseSequence, Target, Transition};
use crate::error::{validation, Error, Result};
use crate::hamiltonian::Builder;
use crate::noise::ShotContext;
use crate::propagate::expm_action;
use crate::state::{Atom, Level, TwoAtomState};
use crate::C64;

/// Upper bound on `rate·substep` for jump sampling.
pub const MAX_JUMP_PROBABILITY_PER_STEP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JumpTarget {
    Level(Level),
    /// The atom leaves the trap.
    Loss,
}

/// `L = |to⟩⟨from|` on one atom, at `rate` (1/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpChannel {
    pub atom: Atom,
    pub from: Level,
    pub to: JumpTarget,
    pub rate: f64,
}

impl JumpChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(validation(format!("jump rate must be finite and ≥ 0, got {}", self.rate)));
        }
        if self.to == JumpTarget::Level(self.from) {
            return Err(validation("jump channel maps a level onto itself"));
        }
        Ok(())
    }
}

/// Rydberg decay (black-body and radiative) on both atoms, treated as loss.
pub fn rydberg_decay(rate: f64) -> Vec<JumpChannel> {
    Atom::BOTH
        .iter()
        .map(|&atom| JumpChannel { atom, from: Level::Rydberg, to: JumpTarget::Loss, rate })
        .collect()
}

/// Static setting of a trajectory: interaction, dissipation and the noise
/// realization of the shot.
#[derive(Clone, Debug)]
pub struct Dynamics {
    /// `|rr⟩` shift, rad/s.
    pub interaction: f64,
    pub channels: Vec<JumpChannel>,
    pub context: ShotContext,
    /// Sub-step while a noisy Rydberg drive is on.
    pub noise_step: Option<f64>,
}

impl Dynamics {
    pub fn coherent(interaction: f64) -> Self {
        Dynamics { interaction, channels: Vec::new(), context: ShotContext::quiet(), noise_step: None }
    }

    pub fn with_channels(mut self, channels: Vec<JumpChannel>) -> Self {
        self.channels = channels;
        self
    }
}

/// Atom is excluded from all drives (lost, or a dark spectator).
fn inactive(state: &TwoAtomState, ctx: &ShotContext, atom: Atom) -> bool {
    state.is_lost(atom) || ctx.prep_error[atom.index()]
}

fn active_target(target: Target, off: [bool; 2]) -> Option<Target> {
    let a1 = target.includes(Atom::First) && !off[0];
    let a2 = target.includes(Atom::Second) && !off[1];
    match (a1, a2) {
        (true, true) => Some(Target::Both),
        (true, false) => Some(Target::Atom1),
        (false, true) => Some(Target::Atom2),
        (false, false) => None,
    }
}

/// Runs one trajectory. Deterministic given `rng`; with no channels and a
/// quiet context it reduces to composing `evolve_segment` over the segments.
pub fn run_trajectory<R: Rng + ?Sized>(
    state: &TwoAtomState,
    sequence: &PulseSequence,
    dynamics: &Dynamics,
    rng: &mut R,
) -> Result<TwoAtomState> {
    run_trajectory_observed(state, sequence, dynamics, rng, |_, _| {})
}

/// As [`run_trajectory`], calling `observe(segment_index, state)` after
/// every segment.
pub fn run_trajectory_observed<R, F>(
    state: &TwoAtomState,
    sequence: &PulseSequence,
    dynamics: &Dynamics,
    rng: &mut R,
    mut observe: F,
) -> Result<TwoAtomState>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &TwoAtomState),
{
    sequence.validate()?;
    for c in &dynamics.channels {
        c.validate()?;
    }
    let ctx = &dynamics.context;
    let mut psi = state.clone();
    let mut t = 0.0;
    let hom = (ctx.ground_dephasing_rate > 0.0).then(|| Normal::new(0.0, 1.0).unwrap());

    for (si, seg) in sequence.segments.iter().enumerate() {
        if seg.duration == 0.0 {
            observe(si, &psi);
            continue;
        }
        // A channel acts only if its source level is populated or driven.
        let channels: Vec<JumpChannel> = dynamics
            .channels
            .iter()
            .filter(|c| {
                c.rate > 0.0
                    && !psi.is_lost(c.atom)
                    && (psi.level_population(c.atom, c.from) > 0.0
                        || seg.drives.iter().any(|d| {
                            d.rabi != 0.0 && d.target.includes(c.atom) && (d.transition.lower() == c.from || d.transition.upper() == c.from)
                        }))
            })
            .copied()
            .collect();
        let total_rate: f64 = channels.iter().map(|c| c.rate).sum();
        let mut max_step = f64::INFINITY;
        if total_rate > 0.0 {
            max_step = max_step.min(MAX_JUMP_PROBABILITY_PER_STEP / total_rate);
        }
        if let Some(step) = dynamics.noise_step {
            if !ctx.phase.is_zero() && seg.drives_transition(Transition::Rydberg1r) {
                max_step = max_step.min(step);
            }
        }
        let n = if max_step.is_finite() { (seg.duration / max_step).ceil().max(1.0) as usize } else { 1 };
        let dt = seg.duration / n as f64;

        for _ in 0..n {
            let off = [inactive(&psi, ctx, Atom::First), inactive(&psi, ctx, Atom::Second)];
            let laser_phase = ctx.phase.at(t + 0.5 * dt);
            let mut b = Builder::new();
            for d in &seg.drives {
                if let Some(target) = active_target(d.target, off) {
                    let extra_phase = if d.transition == Transition::Rydberg1r { laser_phase } else { 0.0 };
                    add_drive(&mut b, d, target, extra_phase, 0.0);
                }
            }
            for atom in Atom::BOTH {
                let i = atom.index();
                if psi.is_lost(atom) {
                    continue;
                }
                b.level_shift(atom, Level::Rydberg, -ctx.doppler[i]);
                let mut qubit = if seg.trap_on { ctx.lightshift[i] } else { 0.0 };
                if let Some(normal) = &hom {
                    // Phase increment with variance 2·dt/T₂′ spread over the step.
                    let dphi = (2.0 * ctx.ground_dephasing_rate * dt).sqrt() * normal.sample(rng);
                    qubit += dphi / dt;
                }
                b.level_shift(atom, Level::One, -qubit);
            }
            b.interaction(dynamics.interaction);
            for c in &channels {
                if !psi.is_lost(c.atom) {
                    b.decay(c.atom, c.from, c.rate);
                }
            }
            let m = b.matrix();
            *psi.amplitudes_mut() = expm_action(&m, C64::new(0.0, -dt), psi.amplitudes());
            if !psi.is_finite() {
                return Err(Error::Numeric("trajectory produced non-finite amplitudes".into()));
            }
            if total_rate > 0.0 {
                let p_jump = (1.0 - psi.norm_sqr()).max(0.0);
                if rng.random::<f64>() < p_jump {
                    jump(&mut psi, &channels, rng)?;
                }
            }
            if total_rate > 0.0 || hom.is_some() {
                psi.normalize()?;
            }
            t += dt;
        }
        observe(si, &psi);
    }
    Ok(psi)
}

fn jump<R: Rng + ?Sized>(psi: &mut TwoAtomState, channels: &[JumpChannel], rng: &mut R) -> Result<()> {
    let weights: Vec<f64> = channels
        .iter()
        .map(|c| if psi.is_lost(c.atom) { 0.0 } else { c.rate * psi.level_population(c.atom, c.from) })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Ok(());
    }
    let mut u = rng.random::<f64>() * total;
    let mut chosen = channels.len() - 1;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            chosen = k;
            break;
        }
        u -= w;
    }
    let c = channels[chosen];
    match c.to {
        JumpTarget::Loss => psi.remove_atom(c.atom, c.from),
        JumpTarget::Level(to) => {
            let amps = psi.amplitudes_mut();
            let mut out = [C64::new(0.0, 0.0); 9];
            for other in Level::ALL {
                let (src, dst) = match c.atom {
                    Atom::First => (crate::state::basis_index(c.from, other), crate::state::basis_index(to, other)),
                    Atom::Second => (crate::state::basis_index(other, c.from), crate::state::basis_index(other, to)),
                };
                out[dst] = amps[src];
            }
            *amps = out;
            psi.normalize()
        }
    }
}
