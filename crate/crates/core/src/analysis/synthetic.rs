//! Forward model for Bell-analysis inputs: a two-qubit density matrix that
//! is diagonal apart from a real `ρ₀₁,₁₀` coherence, independent per-atom
//! loss, a global analysis rotation and ideal blow-away readout.

use nalgebra::Matrix4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constants::TWO_PI;
use crate::detection::{Counts, CountsTable};
use crate::error::{validation, Result};
use crate::C64;

/// Normalized two-qubit state `σ` of the surviving pairs plus per-atom loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityModel {
    /// Diagonal of `σ` over `|00⟩, |01⟩, |10⟩, |11⟩`.
    pub diag: [f64; 4],
    /// `Re σ₀₁,₁₀`.
    pub coherence: f64,
    pub loss: [f64; 2],
}

impl DensityModel {
    pub fn new(diag: [f64; 4], coherence: f64, loss: [f64; 2]) -> Result<Self> {
        let m = DensityModel { diag, coherence, loss };
        m.validate()?;
        Ok(m)
    }

    /// Builds the model from absolute (loss-inclusive) populations, as
    /// tabulated: `P₀₀`, `P₁₁`, `ℛ` and per-atom losses. The remaining
    /// population `1 − P₀₀ − P₁₁ − L_t` is split evenly over `|01⟩, |10⟩`.
    pub fn from_absolute(p00: f64, p11: f64, coherence: f64, loss: [f64; 2]) -> Result<Self> {
        let k = (1.0 - loss[0]) * (1.0 - loss[1]);
        if !(k > 0.0) {
            return Err(validation("total loss leaves no surviving pairs"));
        }
        let s = k - p00 - p11;
        Self::new([p00 / k, 0.5 * s / k, 0.5 * s / k, p11 / k], coherence / k, loss)
    }

    pub fn psi_plus(loss: [f64; 2]) -> Self {
        DensityModel { diag: [0.0, 0.5, 0.5, 0.0], coherence: 0.5, loss }
    }

    /// `(|01⟩⟨01| + |10⟩⟨10|)/2`.
    pub fn separable(loss: [f64; 2]) -> Self {
        DensityModel { diag: [0.0, 0.5, 0.5, 0.0], coherence: 0.0, loss }
    }

    pub fn validate(&self) -> Result<()> {
        if self.diag.iter().any(|p| !(0.0..=1.0).contains(p)) || (self.diag.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(validation("σ diagonal must be a probability vector"));
        }
        if self.coherence.abs() > (self.diag[1] * self.diag[2]).sqrt() + 1e-12 {
            return Err(validation("coherence exceeds √(σ₀₁σ₁₀): not positive semidefinite"));
        }
        if self.loss.iter().any(|l| !(0.0..1.0).contains(l)) {
            return Err(validation("losses must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn pair_survival(&self) -> f64 {
        (1.0 - self.loss[0]) * (1.0 - self.loss[1])
    }

    pub fn loss_total(&self) -> f64 {
        1.0 - self.pair_survival()
    }

    /// Absolute `P₀₀`, `P₁₁`, `P₀₁ + P₁₀`, `ℛ` as the pipeline defines them.
    pub fn absolute(&self) -> [f64; 4] {
        let k = self.pair_survival();
        [k * self.diag[0], k * self.diag[3], k * (self.diag[1] + self.diag[2]), k * self.coherence]
    }

    pub fn fidelity(&self) -> f64 {
        let a = self.absolute();
        a[2] / 2.0 + a[3]
    }

    fn sigma(&self) -> Matrix4<C64> {
        let mut m = Matrix4::from_diagonal(&self.diag.map(|d| C64::new(d, 0.0)).into());
        m[(1, 2)] = C64::new(self.coherence, 0.0);
        m[(2, 1)] = C64::new(self.coherence, 0.0);
        m
    }

    /// Probabilities of (both, only-1, only-2, none) after the rotation
    /// `exp(−iθσₓ/2)` on each atom and blow-away of `|1⟩`.
    pub fn probabilities(&self, theta: f64) -> [f64; 4] {
        let (c, s) = ((0.5 * theta).cos(), (0.5 * theta).sin());
        let r1 = nalgebra::Matrix2::new(C64::new(c, 0.0), C64::new(0.0, -s), C64::new(0.0, -s), C64::new(c, 0.0));
        let r = r1.kronecker(&r1);
        let rho = r * self.sigma() * r.adjoint();
        let q: [f64; 4] = std::array::from_fn(|i| rho[(i, i)].re.max(0.0));
        // Reduced |0⟩ populations of each atom.
        let a1 = q[0] + q[1];
        let a2 = q[0] + q[2];
        let [l1, l2] = self.loss;
        let k = self.pair_survival();
        let only1_single = (1.0 - l1) * l2;
        let only2_single = l1 * (1.0 - l2);
        let both = k * q[0];
        let only1 = k * q[1] + only1_single * a1;
        let only2 = k * q[2] + only2_single * a2;
        let none = (1.0 - both - only1 - only2).max(0.0);
        [both, only1, only2, none]
    }

    /// Presence probabilities without blow-away (both, only-1, only-2, none).
    pub fn recapture_probabilities(&self) -> [f64; 4] {
        let [l1, l2] = self.loss;
        [(1.0 - l1) * (1.0 - l2), (1.0 - l1) * l2, l1 * (1.0 - l2), l1 * l2]
    }
}

/// `n` equally spaced angles over one period, starting at 0.
pub fn uniform_thetas(n: usize) -> Vec<f64> {
    (0..n).map(|k| TWO_PI * k as f64 / n as f64).collect()
}

/// Largest-remainder rounding of `n·p` to integer counts summing to `n`.
pub fn expected_counts(p: [f64; 4], n: u64) -> Counts {
    let total: f64 = p.iter().sum();
    let exact: Vec<f64> = p.iter().map(|v| v / total * n as f64).collect();
    let mut c: Vec<u64> = exact.iter().map(|v| v.floor() as u64).collect();
    let mut rest = n - c.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for i in order {
        if rest == 0 {
            break;
        }
        c[i] += 1;
        rest -= 1;
    }
    Counts { both: c[0], only1: c[1], only2: c[2], none: c[3] }
}

/// Multinomial draw of `n` shots.
pub fn sampled_counts<R: Rng + ?Sized>(p: [f64; 4], n: u64, rng: &mut R) -> Counts {
    let total: f64 = p.iter().sum();
    let mut c = Counts::default();
    for _ in 0..n {
        let mut u = rng.random::<f64>() * total;
        let mut k = 3;
        for (i, w) in p.iter().enumerate() {
            if u < *w {
                k = i;
                break;
            }
            u -= w;
        }
        match k {
            0 => c.both += 1,
            1 => c.only1 += 1,
            2 => c.only2 += 1,
            _ => c.none += 1,
        }
    }
    c
}

/// Blow-away scan with expected (rounded) counts.
pub fn expected_scan(model: &DensityModel, thetas: &[f64], shots: u64) -> CountsTable {
    CountsTable::from_rows(true, thetas.iter().map(|&t| (t, expected_counts(model.probabilities(t), shots))))
}

pub fn sampled_scan<R: Rng + ?Sized>(model: &DensityModel, thetas: &[f64], shots: u64, rng: &mut R) -> CountsTable {
    CountsTable::from_rows(true, thetas.iter().map(|&t| (t, sampled_counts(model.probabilities(t), shots, rng))))
}

/// Recapture calibration with pair survival `p_recap`; the remaining shots
/// are split over the loss categories in proportion to the model's losses.
pub fn recapture_probabilities(model: &DensityModel, p_recap: f64) -> [f64; 4] {
    let r = model.recapture_probabilities();
    let rest = r[1] + r[2] + r[3];
    let scale = if rest > 0.0 { (1.0 - p_recap) / rest } else { 0.0 };
    let mut p = [p_recap, r[1] * scale, r[2] * scale, r[3] * scale];
    if rest == 0.0 {
        p[3] = 1.0 - p_recap;
    }
    p
}

pub fn expected_recap(model: &DensityModel, p_recap: f64, shots: u64) -> CountsTable {
    CountsTable::from_rows(false, [(0.0, expected_counts(recapture_probabilities(model, p_recap), shots))])
}

pub fn sampled_recap<R: Rng + ?Sized>(model: &DensityModel, p_recap: f64, shots: u64, rng: &mut R) -> CountsTable {
    CountsTable::from_rows(false, [(0.0, sampled_counts(recapture_probabilities(model, p_recap), shots, rng))])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::parity;
    use approx::assert_abs_diff_eq;

    #[test]
    fn psi_plus_parity_is_minus_cos_2theta() {
        let m = DensityModel::psi_plus([0.0, 0.0]);
        for t in uniform_thetas(24) {
            let [b, o1, o2, n] = m.probabilities(t);
            // present ↔ |0⟩, so (both, only1, only2, none) = (P00, P01, P10, P11).
            assert_abs_diff_eq!(parity([b, o1, o2, n]), -(2.0 * t).cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn mean_identity() {
        let m = DensityModel::new([0.1, 0.35, 0.4, 0.15], 0.2, [0.0, 0.0]).unwrap();
        let th = uniform_thetas(16);
        let mean = th.iter().map(|&t| m.probabilities(t)[0]).sum::<f64>() / 16.0;
        let expect = (0.75 + 3.0 * 0.25 + 2.0 * 0.2) / 8.0;
        assert_abs_diff_eq!(mean, expect, epsilon = 1e-12);
    }

    #[test]
    fn probabilities_normalized() {
        let m = DensityModel::new([0.05, 0.4, 0.45, 0.1], 0.3, [0.13, 0.12]).unwrap();
        for t in uniform_thetas(10) {
            assert_abs_diff_eq!(m.probabilities(t).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn reference_density_matrix_values() {
        let m = DensityModel::from_absolute(0.03, 0.01, 0.27, [0.13, 0.12]).unwrap();
        let a = m.absolute();
        assert_abs_diff_eq!(m.loss_total(), 0.2344, epsilon = 1e-12);
        assert_abs_diff_eq!(a[2], 0.7256, epsilon = 1e-12);
        assert_abs_diff_eq!(m.fidelity(), 0.6328, epsilon = 1e-12);
    }

    #[test]
    fn rounding_preserves_total() {
        let c = expected_counts([0.333, 0.333, 0.334, 0.0], 250);
        assert_eq!(c.total(), 250);
        assert_eq!(expected_counts([1.0, 0.0, 0.0, 0.0], 7).both, 7);
    }

    #[test]
    fn rejects_unphysical() {
        assert!(DensityModel::new([0.0, 0.5, 0.5, 0.0], 0.6, [0.0, 0.0]).is_err());
        assert!(DensityModel::new([0.0, 0.5, 0.4, 0.0], 0.0, [0.0, 0.0]).is_err());
    }
}
