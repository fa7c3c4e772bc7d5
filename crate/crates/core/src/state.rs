//! Two-atom state over the nine-dimensional product basis
//! `{|0⟩, |1⟩, |r⟩} ⊗ {|0⟩, |1⟩, |r⟩}`.
//!
//! Basis ordering is `|00⟩, |01⟩, |0r⟩, |10⟩, |11⟩, |1r⟩, |r0⟩, |r1⟩, |rr⟩`
//! with the first label belonging to atom 1.
//!
//! An atom that has left the trap (Rydberg decay, ejection) is flagged as
//! lost. Its amplitude is parked in the `|0⟩` slot so the vector continues
//! to carry the conditional state of the surviving atom; drives never act on
//! a lost atom and readout always reports it absent.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::C64;

pub const DIM: usize = 9;

pub type Amplitudes = [C64; DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Zero = 0,
    One = 1,
    Rydberg = 2,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Zero, Level::One, Level::Rydberg];

    pub fn from_index(i: usize) -> Level {
        match i {
            0 => Level::Zero,
            1 => Level::One,
            2 => Level::Rydberg,
            _ => panic!("level index {i} out of range"),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Level::Zero => "0",
            Level::One => "1",
            Level::Rydberg => "r",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Atom {
    First = 0,
    Second = 1,
}

impl Atom {
    pub const BOTH: [Atom; 2] = [Atom::First, Atom::Second];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Atom {
        match self {
            Atom::First => Atom::Second,
            Atom::Second => Atom::First,
        }
    }
}

pub fn basis_index(first: Level, second: Level) -> usize {
    3 * first as usize + second as usize
}

pub fn basis_levels(index: usize) -> (Level, Level) {
    (Level::from_index(index / 3), Level::from_index(index % 3))
}

/// Level of `atom` in basis state `index`.
pub fn level_of(index: usize, atom: Atom) -> Level {
    let (a, b) = basis_levels(index);
    match atom {
        Atom::First => a,
        Atom::Second => b,
    }
}

pub fn basis_label(index: usize) -> String {
    let (a, b) = basis_levels(index);
    format!("|{}{}⟩", a.label(), b.label())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoAtomState {
    amps: Amplitudes,
    lost: [bool; 2],
}

impl TwoAtomState {
    pub fn basis(first: Level, second: Level) -> Self {
        let mut amps = [C64::new(0.0, 0.0); DIM];
        amps[basis_index(first, second)] = C64::new(1.0, 0.0);
        TwoAtomState { amps, lost: [false; 2] }
    }

    /// Both atoms pumped into `|1⟩`.
    pub fn ground_pair() -> Self {
        Self::basis(Level::One, Level::One)
    }

    /// Atom 1 in `level`, trap 2 empty.
    pub fn single_atom(level: Level) -> Self {
        let mut s = Self::basis(level, Level::Zero);
        s.lost[1] = true;
        s
    }

    /// `(|01⟩ + |10⟩)/√2`.
    pub fn psi_plus() -> Self {
        Self::superposition(
            (Level::Zero, Level::One),
            (Level::One, Level::Zero),
            C64::new(1.0, 0.0),
        )
    }

    /// `(|1r⟩ + |r1⟩)/√2`, the blockaded single-excitation state.
    pub fn w_state() -> Self {
        Self::superposition(
            (Level::One, Level::Rydberg),
            (Level::Rydberg, Level::One),
            C64::new(1.0, 0.0),
        )
    }

    /// `(|a⟩ + e^{iφ}|b⟩)/√2` for two distinct basis states, with `phase = e^{iφ}`.
    pub fn superposition(a: (Level, Level), b: (Level, Level), phase: C64) -> Self {
        let mut amps = [C64::new(0.0, 0.0); DIM];
        amps[basis_index(a.0, a.1)] = C64::new(FRAC_1_SQRT_2, 0.0);
        amps[basis_index(b.0, b.1)] += phase * FRAC_1_SQRT_2;
        TwoAtomState { amps, lost: [false; 2] }
    }

    /// Builds a state from raw amplitudes, checking the loss invariant and
    /// the norm bound.
    pub fn from_amplitudes(amps: Amplitudes, lost: [bool; 2]) -> Result<Self> {
        let s = TwoAtomState { amps, lost };
        s.check()?;
        Ok(s)
    }

    pub fn amplitudes(&self) -> &Amplitudes {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut Amplitudes {
        &mut self.amps
    }

    pub fn lost(&self) -> [bool; 2] {
        self.lost
    }

    pub fn is_lost(&self, atom: Atom) -> bool {
        self.lost[atom.index()]
    }

    pub fn amplitude(&self, first: Level, second: Level) -> C64 {
        self.amps[basis_index(first, second)]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_sqr();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::Numeric(format!("cannot normalize state with norm² {n}")));
        }
        let inv = 1.0 / n.sqrt();
        for a in self.amps.iter_mut() {
            *a *= inv;
        }
        Ok(())
    }

    /// `|amplitude|²` for every basis state.
    pub fn populations(&self) -> [f64; DIM] {
        let mut p = [0.0; DIM];
        for (pi, a) in p.iter_mut().zip(self.amps.iter()) {
            *pi = a.norm_sqr();
        }
        p
    }

    /// Probability of `atom` being in `level` (unnormalized).
    pub fn level_population(&self, atom: Atom, level: Level) -> f64 {
        (0..DIM)
            .filter(|&i| level_of(i, atom) == level)
            .map(|i| self.amps[i].norm_sqr())
            .sum()
    }

    /// `⟨other|self⟩`.
    pub fn overlap(&self, other: &TwoAtomState) -> C64 {
        other
            .amps
            .iter()
            .zip(self.amps.iter())
            .map(|(o, s)| o.conj() * s)
            .sum()
    }

    pub fn fidelity_with(&self, target: &TwoAtomState) -> f64 {
        self.overlap(target).norm_sqr()
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// Collapses `atom` out of the coherent dynamics, keeping the branch in
    /// which it occupied `from`. The surviving branch is parked in the `|0⟩`
    /// slot and the state is renormalized.
    pub(crate) fn remove_atom(&mut self, atom: Atom, from: Level) -> Result<()> {
        let mut out = [C64::new(0.0, 0.0); DIM];
        for other in Level::ALL {
            let (src, dst) = match atom {
                Atom::First => (basis_index(from, other), basis_index(Level::Zero, other)),
                Atom::Second => (basis_index(other, from), basis_index(other, Level::Zero)),
            };
            out[dst] = self.amps[src];
        }
        self.amps = out;
        self.lost[atom.index()] = true;
        self.normalize()
    }

    /// Checks the norm bound and the loss invariant.
    pub fn check(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::Numeric("non-finite amplitude".into()));
        }
        let n = self.norm_sqr();
        if n > 1.0 + 1e-9 {
            return Err(validation(format!("state norm² {n} exceeds 1")));
        }
        for atom in Atom::BOTH {
            if self.lost[atom.index()] {
                let stray = self.level_population(atom, Level::One)
                    + self.level_population(atom, Level::Rydberg);
                if stray > 1e-24 {
                    return Err(validation(format!(
                        "lost atom {} carries population {stray} outside the parked slot",
                        atom.index() + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn basis_ordering() {
        let labels: Vec<_> = (0..DIM).map(basis_label).collect();
        assert_eq!(
            labels,
            ["|00⟩", "|01⟩", "|0r⟩", "|10⟩", "|11⟩", "|1r⟩", "|r0⟩", "|r1⟩", "|rr⟩"]
        );
    }

    #[test]
    fn psi_plus_populations() {
        let p = TwoAtomState::psi_plus().populations();
        assert_abs_diff_eq!(p[basis_index(Level::Zero, Level::One)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[basis_index(Level::One, Level::Zero)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn w_populations() {
        let p = TwoAtomState::w_state().populations();
        assert_abs_diff_eq!(p[5], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[7], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn remove_atom_keeps_conditional_branch() {
        let mut s = TwoAtomState::superposition(
            (Level::Zero, Level::Rydberg),
            (Level::One, Level::One),
            C64::new(1.0, 0.0),
        );
        s.remove_atom(Atom::Second, Level::Rydberg).unwrap();
        assert_eq!(s.lost(), [false, true]);
        assert_abs_diff_eq!(s.amplitude(Level::Zero, Level::Zero).norm(), 1.0, epsilon = 1e-15);
        s.check().unwrap();
    }

    #[test]
    fn rejects_population_on_lost_atom() {
        let s = TwoAtomState::basis(Level::One, Level::One);
        assert!(TwoAtomState::from_amplitudes(*s.amplitudes(), [true, false]).is_err());
    }

    #[test]
    fn rejects_overnormalized() {
        let mut a = *TwoAtomState::ground_pair().amplitudes();
        a[0] = C64::new(0.5, 0.0);
        assert!(TwoAtomState::from_amplitudes(a, [false; 2]).is_err());
    }
}
