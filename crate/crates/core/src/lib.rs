//! Monte-Carlo simulation of a two-atom Rydberg-blockade entanglement
//! experiment with neutral-atom qubits, together with the estimation
//! pipeline used to analyse its output: Rabi and Ramsey fits, parity
//! oscillations and loss-corrected Bell-state fidelity.
//!
//! The crate is organised bottom-up:
//!
//! - [`state`], [`hamiltonian`], [`propagate`], [`trajectory`]: the
//!   nine-level two-atom state, piecewise-constant propagation and
//!   quantum-jump trajectories.
//! - [`atom`]: drive parameters, Van der Waals interaction, pulse sequences.
//! - [`noise`]: per-shot noise sampling and closed-form coherence limits.
//! - [`detection`]: recapture / blow-away readout and count tables.
//! - [`analysis`]: least squares, curve fits, Bell-fidelity pipeline.
//! - [`config`] and [`experiment`]: the runnable measurements.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod atom;
pub mod config;
pub mod constants;
pub mod detection;
mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod noise;
pub mod propagate;
pub mod rng;
pub mod state;
pub mod trajectory;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

pub use analysis::{BellEstimate, FitResult};
pub use atom::{DriveParams, InteractionParams, PulseSequence, Segment, Target, Transition};
pub use config::ExperimentConfig;
pub use detection::{CountsTable, DetectionParams, ShotOutcome};
pub use hamiltonian::Hamiltonian;
pub use noise::{PhaseNoiseParams, ShotContext, ThermalParams};
pub use state::{Atom, Level, TwoAtomState};
pub use trajectory::JumpChannel;
