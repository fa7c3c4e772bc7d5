//! Per-shot noise sampling and closed-form coherence predictors.
//!
//! Three dephasing mechanisms are modelled, each quasi-static or stochastic
//! per shot:
//!
//! - thermal Doppler shift of the two-photon Rydberg transition, `δ = k_eff·v`
//!   with `v ~ N(0, k_B·T/m)`, constant over a shot (the trap is off and the
//!   drop time is short);
//! - differential light shift of the qubit in the trap, proportional to the
//!   motional energy drawn from the 3D harmonic thermal distribution;
//! - phase noise of the Rydberg excitation laser, either white frequency
//!   noise or a servo bump.
//!
//! Ground-state homogeneous dephasing (what a spin echo cannot remove) is a
//! white frequency noise on the qubit splitting, parameterized directly by
//! the echo time `T₂′`.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::constants::{CS_MASS, HBAR, K_B, TWO_PI};
use crate::error::{domain, validation, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    /// Kelvin.
    pub temperature: f64,
    /// kg.
    pub mass: f64,
    /// Effective two-photon wavevector, 1/m.
    pub k_eff: f64,
    /// Ratio of qubit hyperfine splitting to effective trap detuning.
    pub eta: f64,
}

impl ThermalParams {
    pub fn caesium(temperature: f64, k_eff: f64, eta: f64) -> Self {
        ThermalParams { temperature, mass: CS_MASS, k_eff, eta }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(validation(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.mass > 0.0) {
            return Err(validation("mass must be > 0"));
        }
        if !(self.k_eff >= 0.0) || !(self.eta >= 0.0) {
            return Err(validation("k_eff and eta must be ≥ 0"));
        }
        Ok(())
    }

    /// One-dimensional rms velocity `√(k_B·T/m)`, m/s.
    pub fn velocity_spread(&self) -> f64 {
        (K_B * self.temperature / self.mass).sqrt()
    }

    /// rms Doppler detuning `k_eff·Δv`, rad/s.
    pub fn doppler_spread(&self) -> f64 {
        self.k_eff * self.velocity_spread()
    }
}

/// Static two-photon Doppler detuning for one atom, rad/s.
pub fn sample_doppler<R: Rng + ?Sized>(p: &ThermalParams, rng: &mut R) -> f64 {
    let sigma = p.doppler_spread();
    if sigma == 0.0 {
        return 0.0;
    }
    sigma * Normal::new(0.0, 1.0).unwrap().sample(rng)
}

/// Differential qubit light shift for one atom, rad/s.
///
/// The motional energy `E` is drawn from `p(E) ∝ E²·exp(−E/k_BT)` and the
/// shift is `η·⟨U⟩/ħ` with the time-averaged potential energy `⟨U⟩ = E/2`.
/// The resulting Ramsey envelope is `[1 + (ηk_BT·t/2ħ)²]^{−3/2}`, i.e. the
/// fringe-decay law with `T₂* = √0.95·2ħ/(ηk_BT)`.
pub fn sample_lightshift<R: Rng + ?Sized>(p: &ThermalParams, trap_on: bool, rng: &mut R) -> f64 {
    if !trap_on || p.eta == 0.0 {
        return 0.0;
    }
    let kt = K_B * p.temperature;
    let energy = Gamma::new(3.0, kt).unwrap().sample(rng);
    p.eta * 0.5 * energy / HBAR
}

/// Mean of [`sample_lightshift`] with the trap on: `3ηk_BT/(2ħ)`.
pub fn mean_lightshift(p: &ThermalParams) -> f64 {
    1.5 * p.eta * K_B * p.temperature / HBAR
}

/// `T₂,D = 1/(√2·Δv·k_eff)`.
///
/// A Gaussian Doppler spread of rms `k_eff·Δv` makes Ramsey fringes decay as
/// `exp(−(k_eff·Δv·t)²/2)`, whose 1/e time is `√2/(k_eff·Δv)`, twice this
/// value. The expression is kept as stated; the simulations show the `√2/`
/// scaling.
pub fn doppler_t2star(p: &ThermalParams) -> Result<f64> {
    if !(p.k_eff > 0.0) || !(p.temperature > 0.0) {
        return Err(domain("doppler_t2star needs k_eff > 0 and T > 0"));
    }
    Ok(1.0 / (SQRT_2 * p.velocity_spread() * p.k_eff))
}

/// `T₂* = 0.97·2ħ/(η·k_B·T)`.
pub fn temp_limited_t2star(p: &ThermalParams) -> Result<f64> {
    if !(p.eta > 0.0) || !(p.temperature > 0.0) {
        return Err(domain("temp_limited_t2star needs eta > 0 and T > 0"));
    }
    Ok(0.97 * 2.0 * HBAR / (p.eta * K_B * p.temperature))
}

/// Dephasing-limited fidelity bound `[1 + exp(−t²/T₂²)]/2`.
pub fn fidelity_bound(t: f64, t2: f64) -> Result<f64> {
    if !(t2 > 0.0) {
        return Err(domain(format!("t2 must be > 0, got {t2}")));
    }
    Ok(0.5 * (1.0 + (-(t / t2).powi(2)).exp()))
}

/// `η_r = 1 − Γ_r·t_recap`.
pub fn rydberg_detection_efficiency(gamma_r: f64, t_recap: f64) -> Result<f64> {
    let x = gamma_r * t_recap;
    if !(x < 1.0) || x < 0.0 {
        return Err(domain(format!("Γ_r·t_recap must lie in [0, 1), got {x}")));
    }
    Ok(1.0 - x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhaseNoiseParams {
    Off,
    /// Wiener phase, `⟨Δφ²⟩ = 2π·linewidth·t` (Lorentzian FWHM in Hz).
    WhiteFrequency { linewidth_hz: f64, step_s: f64 },
    /// `φ(t) = a·sin(2πf·t + ψ)` with `a` Rayleigh-distributed of scale
    /// `amplitude_rad` and `ψ` uniform.
    ServoBump { frequency_hz: f64, amplitude_rad: f64, step_s: f64 },
}

impl PhaseNoiseParams {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PhaseNoiseParams::Off => Ok(()),
            PhaseNoiseParams::WhiteFrequency { linewidth_hz, step_s } => {
                if !(linewidth_hz >= 0.0) || !(step_s > 0.0) {
                    return Err(validation("white-frequency noise needs linewidth ≥ 0 and step > 0"));
                }
                Ok(())
            }
            PhaseNoiseParams::ServoBump { frequency_hz, amplitude_rad, step_s } => {
                if !(frequency_hz >= 0.0) || !(amplitude_rad >= 0.0) || !(step_s > 0.0) {
                    return Err(validation("servo-bump noise needs frequency ≥ 0, amplitude ≥ 0, step > 0"));
                }
                Ok(())
            }
        }
    }

    /// Sub-step size while a noisy drive is on; `None` when noiseless.
    pub fn step(&self) -> Option<f64> {
        match *self {
            PhaseNoiseParams::Off => None,
            PhaseNoiseParams::WhiteFrequency { linewidth_hz, step_s } => (linewidth_hz > 0.0).then_some(step_s),
            PhaseNoiseParams::ServoBump { amplitude_rad, step_s, .. } => (amplitude_rad > 0.0).then_some(step_s),
        }
    }

    /// Same model with its strength parameter replaced.
    pub fn with_strength(self, s: f64) -> Self {
        match self {
            PhaseNoiseParams::Off => PhaseNoiseParams::Off,
            PhaseNoiseParams::WhiteFrequency { step_s, .. } => PhaseNoiseParams::WhiteFrequency { linewidth_hz: s, step_s },
            PhaseNoiseParams::ServoBump { frequency_hz, step_s, .. } => {
                PhaseNoiseParams::ServoBump { frequency_hz, amplitude_rad: s, step_s }
            }
        }
    }

    pub fn strength(&self) -> f64 {
        match *self {
            PhaseNoiseParams::Off => 0.0,
            PhaseNoiseParams::WhiteFrequency { linewidth_hz, .. } => linewidth_hz,
            PhaseNoiseParams::ServoBump { amplitude_rad, .. } => amplitude_rad,
        }
    }
}

/// Phase offset of the Rydberg laser over a shot, in global shot time.
#[derive(Clone, Debug, PartialEq)]
pub enum PhaseTrace {
    Zero,
    Sinusoid { amplitude: f64, omega: f64, offset: f64 },
    /// Samples at `k·step`, held constant between samples.
    Sampled { step: f64, values: Vec<f64> },
}

impl PhaseTrace {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            PhaseTrace::Zero => 0.0,
            PhaseTrace::Sinusoid { amplitude, omega, offset } => amplitude * (omega * t + offset).sin(),
            PhaseTrace::Sampled { step, values } => {
                let k = ((t / step).floor().max(0.0) as usize).min(values.len().saturating_sub(1));
                values.get(k).copied().unwrap_or(0.0)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, PhaseTrace::Zero)
    }
}

/// Draws a phase trace covering `[0, duration]`.
pub fn sample_phase_noise<R: Rng + ?Sized>(p: &PhaseNoiseParams, duration: f64, rng: &mut R) -> PhaseTrace {
    match *p {
        PhaseNoiseParams::Off => PhaseTrace::Zero,
        PhaseNoiseParams::WhiteFrequency { linewidth_hz, step_s } => {
            if linewidth_hz == 0.0 {
                return PhaseTrace::Zero;
            }
            let n = (duration / step_s).ceil() as usize + 1;
            let normal = Normal::new(0.0, (TWO_PI * linewidth_hz * step_s).sqrt()).unwrap();
            let mut phi = 0.0;
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(phi);
                phi += normal.sample(rng);
            }
            PhaseTrace::Sampled { step: step_s, values }
        }
        PhaseNoiseParams::ServoBump { frequency_hz, amplitude_rad, .. } => {
            if amplitude_rad == 0.0 {
                return PhaseTrace::Zero;
            }
            let u: f64 = rng.random();
            let amplitude = amplitude_rad * (-2.0 * (1.0 - u).ln()).sqrt();
            let offset = TWO_PI * rng.random::<f64>();
            PhaseTrace::Sinusoid { amplitude, omega: TWO_PI * frequency_hz, offset }
        }
    }
}

/// Ensemble noise configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub thermal: ThermalParams,
    pub doppler: bool,
    pub lightshift: bool,
    pub phase: PhaseNoiseParams,
    /// Homogeneous qubit dephasing time `T₂′` (s); `None` disables it.
    pub ground_echo_t2: Option<f64>,
}

impl NoiseParams {
    pub fn quiet(thermal: ThermalParams) -> Self {
        NoiseParams { thermal, doppler: false, lightshift: false, phase: PhaseNoiseParams::Off, ground_echo_t2: None }
    }

    pub fn validate(&self) -> Result<()> {
        self.thermal.validate()?;
        self.phase.validate()?;
        if let Some(t) = self.ground_echo_t2 {
            if !(t > 0.0) {
                return Err(validation("ground_echo_t2 must be > 0"));
            }
        }
        Ok(())
    }
}

/// Sampled noise realization for one shot.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotContext {
    /// Per-atom Doppler detuning of the Rydberg transition, rad/s.
    pub doppler: [f64; 2],
    /// Per-atom differential qubit light shift while trapped, rad/s.
    pub lightshift: [f64; 2],
    pub phase: PhaseTrace,
    /// Atoms that failed optical pumping and sit in a dark spectator state.
    pub prep_error: [bool; 2],
    /// Qubit phase diffusion rate `1/T₂′`, 1/s.
    pub ground_dephasing_rate: f64,
}

impl ShotContext {
    pub fn quiet() -> Self {
        ShotContext {
            doppler: [0.0; 2],
            lightshift: [0.0; 2],
            phase: PhaseTrace::Zero,
            prep_error: [false; 2],
            ground_dephasing_rate: 0.0,
        }
    }

    /// Draws every noise source for one shot. The draw order is fixed so a
    /// shot is reproducible from its stream alone.
    pub fn sample<R: Rng + ?Sized>(noise: &NoiseParams, eta_op: f64, duration: f64, rng: &mut R) -> Self {
        let mut ctx = ShotContext::quiet();
        for i in 0..2 {
            ctx.prep_error[i] = rng.random::<f64>() >= eta_op;
        }
        for i in 0..2 {
            let d = sample_doppler(&noise.thermal, rng);
            if noise.doppler {
                ctx.doppler[i] = d;
            }
        }
        for i in 0..2 {
            let l = sample_lightshift(&noise.thermal, true, rng);
            if noise.lightshift {
                ctx.lightshift[i] = l;
            }
        }
        ctx.phase = sample_phase_noise(&noise.phase, duration, rng);
        ctx.ground_dephasing_rate = noise.ground_echo_t2.map_or(0.0, |t| 1.0 / t);
        ctx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{khz, MS, US};
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn reference_thermal() -> ThermalParams {
        ThermalParams::caesium(10e-6, 5e6, 1.45e-4)
    }

    #[test]
    fn velocity_spread_at_10uk() {
        let dv = reference_thermal().velocity_spread();
        assert_abs_diff_eq!(dv * 1e3, 25.01, epsilon = 0.01);
        let dd = reference_thermal().doppler_spread() / TWO_PI;
        assert!((dd - 19.9e3).abs() < 0.1e3, "Doppler {dd} Hz");
    }

    #[test]
    fn doppler_sampler_statistics() {
        let p = reference_thermal();
        let mut r = rng::stream(1, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_doppler(&p, &mut r)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd / p.doppler_spread() - 1.0).abs() < 0.02);
        let zero = ThermalParams { k_eff: 0.0, ..p };
        assert_eq!(sample_doppler(&zero, &mut r), 0.0);
    }

    #[test]
    fn lightshift_mean_is_gamma3_moment() {
        let p = reference_thermal();
        let mut r = rng::stream(2, 0);
        let n = 200_000;
        let mean = (0..n).map(|_| sample_lightshift(&p, true, &mut r)).sum::<f64>() / n as f64;
        // Gamma(3, k_BT) has mean 3k_BT; σ/mean = 1/√3 per draw.
        let tol = 3.0 * mean_lightshift(&p) / (3f64.sqrt() * (n as f64).sqrt());
        assert!((mean - mean_lightshift(&p)).abs() < tol);
        assert_eq!(sample_lightshift(&p, false, &mut r), 0.0);
        assert_eq!(sample_lightshift(&ThermalParams { eta: 0.0, ..p }, true, &mut r), 0.0);
    }

    #[test]
    fn doppler_t2_formula() {
        let p = ThermalParams { temperature: 0.025f64.powi(2) * CS_MASS / K_B, ..reference_thermal() };
        assert_abs_diff_eq!(doppler_t2star(&p).unwrap() / US, 5.657, epsilon = 1e-3);
        let hot = ThermalParams { temperature: 2.0 * p.temperature, ..p };
        assert_abs_diff_eq!(doppler_t2star(&hot).unwrap() * SQRT_2, doppler_t2star(&p).unwrap(), epsilon = 1e-15);
        let half_k = ThermalParams { k_eff: p.k_eff / 2.0, ..p };
        assert_abs_diff_eq!(doppler_t2star(&half_k).unwrap(), 2.0 * doppler_t2star(&p).unwrap(), epsilon = 1e-15);
        assert!(doppler_t2star(&ThermalParams { k_eff: 0.0, ..p }).is_err());
    }

    #[test]
    fn temperature_limited_t2() {
        let t = temp_limited_t2star(&reference_thermal()).unwrap();
        assert_abs_diff_eq!(t / MS, 10.2, epsilon = 0.05);
        let warm = ThermalParams { temperature: 20e-6, ..reference_thermal() };
        assert_abs_diff_eq!(temp_limited_t2star(&warm).unwrap() / MS, 5.1, epsilon = 0.03);
        let cold = ThermalParams { temperature: 5e-6, ..reference_thermal() };
        assert_abs_diff_eq!(temp_limited_t2star(&cold).unwrap(), 2.0 * t, epsilon = 1e-15);
    }

    #[test]
    fn fidelity_bound_values() {
        let f = fidelity_bound(2.0 * US, 17.0 * US).unwrap();
        assert!(f >= 0.99);
        assert_abs_diff_eq!(f, 0.9931, epsilon = 1e-4);
        assert_eq!(fidelity_bound(0.0, 1.0).unwrap(), 1.0);
        assert_abs_diff_eq!(fidelity_bound(1e3, 1e-6).unwrap(), 0.5, epsilon = 1e-15);
        assert!(fidelity_bound(1.0, 0.0).is_err());
    }

    #[test]
    fn fidelity_bound_monotone() {
        let ts: Vec<f64> = (0..50).map(|k| k as f64 * 0.5 * US).collect();
        for w in ts.windows(2) {
            assert!(fidelity_bound(w[1], 17.0 * US).unwrap() < fidelity_bound(w[0], 17.0 * US).unwrap());
        }
        for k in 1..50 {
            let a = fidelity_bound(2.0 * US, k as f64 * US).unwrap();
            let b = fidelity_bound(2.0 * US, (k + 1) as f64 * US).unwrap();
            assert!(b > a);
        }
    }

    #[test]
    fn detection_efficiency() {
        let g = 1.0 / (134.0 * US);
        assert_abs_diff_eq!(rydberg_detection_efficiency(g, 8.0 * US).unwrap(), 1.0 - 8.0 / 134.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rydberg_detection_efficiency(g, 8.0 * US).unwrap(), 0.940, epsilon = 5e-4);
        assert_eq!(rydberg_detection_efficiency(g, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(rydberg_detection_efficiency(g, 16.0 * US).unwrap(), 0.881, epsilon = 5e-4);
        assert!(rydberg_detection_efficiency(g, 134.0 * US).is_err());
    }

    #[test]
    fn phase_noise_off_is_zero() {
        let mut r = rng::stream(3, 0);
        assert!(sample_phase_noise(&PhaseNoiseParams::Off, 1e-6, &mut r).is_zero());
    }

    #[test]
    fn white_phase_diffusion() {
        let p = PhaseNoiseParams::WhiteFrequency { linewidth_hz: 10e3, step_s: 10e-9 };
        let t = 5.0 * US;
        let n = 4000;
        let mut r = rng::stream(4, 0);
        let var = (0..n)
            .map(|_| {
                let tr = sample_phase_noise(&p, t, &mut r);
                (tr.at(t) - tr.at(0.0)).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let expected = TWO_PI * 10e3 * t;
        assert!((var / expected - 1.0).abs() < 0.1, "var {var} vs {expected}");
    }

    #[test]
    fn servo_bump_rayleigh_scale() {
        let p = PhaseNoiseParams::ServoBump { frequency_hz: 1e6, amplitude_rad: 0.2, step_s: 10e-9 };
        let mut r = rng::stream(5, 0);
        let n = 20000;
        let mean_sq = (0..n)
            .map(|_| match sample_phase_noise(&p, 1e-6, &mut r) {
                PhaseTrace::Sinusoid { amplitude, omega, .. } => {
                    assert_abs_diff_eq!(omega, TWO_PI * 1e6, epsilon = 1e-6);
                    amplitude * amplitude
                }
                other => panic!("unexpected trace {other:?}"),
            })
            .sum::<f64>()
            / n as f64;
        // E[a²] = 2σ² for a Rayleigh variable.
        assert!((mean_sq / (2.0 * 0.04) - 1.0).abs() < 0.05);
    }

    #[test]
    fn context_is_reproducible() {
        let noise = NoiseParams {
            thermal: reference_thermal(),
            doppler: true,
            lightshift: true,
            phase: PhaseNoiseParams::ServoBump { frequency_hz: 1e6, amplitude_rad: 0.1, step_s: 1e-8 },
            ground_echo_t2: Some(0.15),
        };
        let a = ShotContext::sample(&noise, 0.95, 2e-6, &mut rng::stream(9, 17));
        let b = ShotContext::sample(&noise, 0.95, 2e-6, &mut rng::stream(9, 17));
        assert_eq!(a, b);
        let c = ShotContext::sample(&noise, 0.95, 2e-6, &mut rng::stream(9, 18));
        assert_ne!(a, c);
        assert!(a.doppler[0].abs() < 10.0 * khz(20.0));
    }
}
