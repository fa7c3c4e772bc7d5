//! Dense 9×9 generators in angular-frequency units (rad/s).

use std::ops::{Index, IndexMut};

use crate::error::{validation, Result};
use crate::state::{basis_index, Amplitudes, Atom, Level, DIM};
use crate::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Row-major 9×9 complex matrix. Not necessarily Hermitian; the
/// non-Hermitian effective generator of the jump unfolding uses it directly.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix9 {
    data: [C64; DIM * DIM],
}

impl Default for Matrix9 {
    fn default() -> Self {
        Matrix9 { data: [ZERO; DIM * DIM] }
    }
}

impl Index<(usize, usize)> for Matrix9 {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * DIM + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix9 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * DIM + j]
    }
}

impl Matrix9 {
    pub fn apply(&self, v: &Amplitudes) -> Amplitudes {
        let mut out = [ZERO; DIM];
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * DIM..(i + 1) * DIM];
            let mut acc = ZERO;
            for (m, x) in row.iter().zip(v.iter()) {
                acc += m * x;
            }
            *o = acc;
        }
        out
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        (0..DIM)
            .map(|j| (0..DIM).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_diagonal(&self) -> bool {
        (0..DIM).all(|i| (0..DIM).all(|j| i == j || self[(i, j)] == ZERO))
    }

    pub fn diagonal(&self) -> [C64; DIM] {
        let mut d = [ZERO; DIM];
        for (i, di) in d.iter_mut().enumerate() {
            *di = self[(i, i)];
        }
        d
    }

    /// Largest `|M_ij − conj(M_ji)|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..DIM {
            for j in i..DIM {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }
}

/// Hermitian two-atom Hamiltonian, `ħ = 1`, units of rad/s.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Hamiltonian {
    matrix: Matrix9,
}

impl Hamiltonian {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Wraps a matrix after checking Hermiticity to 1e−12 relative tolerance.
    pub fn from_matrix(matrix: Matrix9) -> Result<Self> {
        let scale = matrix.max_abs().max(f64::MIN_POSITIVE);
        let defect = matrix.hermitian_defect();
        if !defect.is_finite() || defect > 1e-12 * scale {
            return Err(validation(format!(
                "hamiltonian is not Hermitian (defect {defect:e}, scale {scale:e})"
            )));
        }
        Ok(Hamiltonian { matrix })
    }

    pub fn matrix(&self) -> &Matrix9 {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix9 {
        self.matrix
    }

    pub fn element(&self, row: (Level, Level), col: (Level, Level)) -> C64 {
        self.matrix[(basis_index(row.0, row.1), basis_index(col.0, col.1))]
    }
}

/// Accumulates single-atom terms lifted to the two-atom space.
#[derive(Clone, Debug, Default)]
pub struct Builder {
    m: Matrix9,
}

impl Builder {
    pub fn new() -> Self {
        Self::default()
    }

    fn pair(atom: Atom, mine: Level, other: Level) -> usize {
        match atom {
            Atom::First => basis_index(mine, other),
            Atom::Second => basis_index(other, mine),
        }
    }

    /// Adds `shift·|level⟩⟨level|` on `atom`.
    pub fn level_shift(&mut self, atom: Atom, level: Level, shift: f64) -> &mut Self {
        if shift != 0.0 {
            for other in Level::ALL {
                let i = Self::pair(atom, level, other);
                self.m[(i, i)] += shift;
            }
        }
        self
    }

    /// Adds `c·|upper⟩⟨lower| + h.c.` on `atom`.
    pub fn coupling(&mut self, atom: Atom, lower: Level, upper: Level, c: C64) -> &mut Self {
        if c != ZERO {
            for other in Level::ALL {
                let lo = Self::pair(atom, lower, other);
                let up = Self::pair(atom, upper, other);
                self.m[(up, lo)] += c;
                self.m[(lo, up)] += c.conj();
            }
        }
        self
    }

    /// Adds `v·|rr⟩⟨rr|`.
    pub fn interaction(&mut self, v: f64) -> &mut Self {
        let i = basis_index(Level::Rydberg, Level::Rydberg);
        self.m[(i, i)] += v;
        self
    }

    /// Adds `−(i/2)·rate` on the diagonal of every basis state with `atom`
    /// in `level` (non-Hermitian decay term).
    pub(crate) fn decay(&mut self, atom: Atom, level: Level, rate: f64) -> &mut Self {
        if rate != 0.0 {
            for other in Level::ALL {
                let i = Self::pair(atom, level, other);
                self.m[(i, i)] += C64::new(0.0, -0.5 * rate);
            }
        }
        self
    }

    pub fn hamiltonian(self) -> Hamiltonian {
        Hamiltonian { matrix: self.m }
    }

    pub(crate) fn matrix(self) -> Matrix9 {
        self.m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupling_lifts_to_both_sectors() {
        let mut b = Builder::new();
        b.coupling(Atom::First, Level::Zero, Level::One, C64::new(1.0, 0.5));
        let h = b.hamiltonian();
        for other in Level::ALL {
            assert_eq!(h.element((Level::One, other), (Level::Zero, other)), C64::new(1.0, 0.5));
            assert_eq!(h.element((Level::Zero, other), (Level::One, other)), C64::new(1.0, -0.5));
        }
        assert_eq!(h.matrix().hermitian_defect(), 0.0);
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = Matrix9::default();
        m[(0, 1)] = C64::new(1.0, 0.0);
        assert!(Hamiltonian::from_matrix(m).is_err());
    }
}
