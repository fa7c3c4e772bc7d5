//! Piecewise-constant propagation.
//!
//! `exp(t·M)·v` is evaluated directly on the vector: the interval is split
//! into `s` pieces with `‖t·M‖₁/s ≤ 1/2` and each piece is summed as a Taylor
//! series until the terms drop below double precision. For the 9×9 systems
//! here this is both cheaper and more accurate than forming the full matrix
//! exponential.

use crate::error::{validation, Error, Result};
use crate::hamiltonian::{Hamiltonian, Matrix9};
use crate::state::{Amplitudes, TwoAtomState};
use crate::C64;

const PIECE_NORM: f64 = 0.5;
const MAX_TERMS: usize = 60;

fn inf_norm(v: &Amplitudes) -> f64 {
    v.iter().map(|c| c.re.abs().max(c.im.abs())).fold(0.0, f64::max)
}

/// `exp(t·m)·v` for an arbitrary (possibly non-Hermitian) generator.
pub fn expm_action(m: &Matrix9, t: C64, v: &Amplitudes) -> Amplitudes {
    if m.is_diagonal() {
        let d = m.diagonal();
        let mut out = *v;
        for (o, di) in out.iter_mut().zip(d.iter()) {
            *o *= (t * di).exp();
        }
        return out;
    }
    let norm = m.one_norm() * t.norm();
    let pieces = ((norm / PIECE_NORM).ceil() as usize).max(1);
    let h = t / pieces as f64;
    let mut x = *v;
    for _ in 0..pieces {
        let mut term = x;
        let mut acc = x;
        for k in 1..=MAX_TERMS {
            let next = m.apply(&term);
            let scale = h / k as f64;
            for (t, n) in term.iter_mut().zip(next.iter()) {
                *t = n * scale;
            }
            for (a, t) in acc.iter_mut().zip(term.iter()) {
                *a += t;
            }
            if inf_norm(&term) <= 1e-18 * inf_norm(&acc) {
                break;
            }
        }
        x = acc;
    }
    x
}

/// Returns `exp(−i·h·dt)·state`. Loss flags are carried through unchanged.
pub fn evolve_segment(state: &TwoAtomState, h: &Hamiltonian, dt: f64) -> Result<TwoAtomState> {
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(validation(format!("segment duration must be finite and ≥ 0, got {dt}")));
    }
    if !state.is_finite() {
        return Err(Error::Numeric("non-finite amplitude in input state".into()));
    }
    // Re-validate: a Hamiltonian can only be built Hermitian, but cheap to confirm.
    let h = Hamiltonian::from_matrix(h.matrix().clone())?;
    let mut out = state.clone();
    *out.amplitudes_mut() = expm_action(h.matrix(), C64::new(0.0, -dt), state.amplitudes());
    if !out.is_finite() {
        return Err(Error::Numeric("propagation produced non-finite amplitudes".into()));
    }
    Ok(out)
}
