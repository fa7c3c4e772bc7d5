//! Curve fits for Rabi floppings, Ramsey decays, fringes and parity.
//!
//! Abscissae are rescaled to `[0, 1]` before fitting so that the optimizer
//! works with parameters of order one; results are reported in the units of
//! the input.

use serde::{Deserialize, Serialize};

use super::lsq::{least_squares, linear_least_squares, FitResult, LsqOptions, Model};
use crate::constants::TWO_PI;
use crate::error::{validation, Result};

/// Reported in place of a decay time the data cannot resolve, in seconds.
pub const TIME_SENTINEL: f64 = 1.0e3;

fn span(x: &[f64]) -> f64 {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

fn scale_of(x: &[f64]) -> Result<f64> {
    let s = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(s > 0.0 && s.is_finite()) {
        return Err(validation("abscissa must contain a finite non-zero value"));
    }
    Ok(s)
}

/// Least-squares periodogram: candidate wavenumbers of `m + c·cos kx + s·sin kx`
/// ranked by residual, best first.
pub fn periodogram(x: &[f64], y: &[f64], k_min: f64, k_max: f64, count: usize) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = (0..count)
        .filter_map(|i| {
            let k = k_min + (k_max - k_min) * i as f64 / (count - 1).max(1) as f64;
            let fit = linear_least_squares(&[&|_| 1.0, &|x| (k * x).cos(), &|x| (k * x).sin()], x, y, None).ok()?;
            Some((k, fit.residual_norm))
        })
        .collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// Seeds for the wavenumber: the best periodogram entries, kept at least a
/// few grid steps apart.
fn frequency_seeds(x: &[f64], y: &[f64], k_min: f64, k_max: f64, want: usize) -> Vec<f64> {
    let count = (((k_max - k_min) / (0.05 * k_min.max(1e-12))).ceil() as usize).clamp(64, 4000);
    let step = (k_max - k_min) / count as f64;
    let mut seeds: Vec<f64> = Vec::new();
    for (k, _) in periodogram(x, y, k_min, k_max, count) {
        if seeds.iter().all(|s| (s - k).abs() > 3.0 * step) {
            seeds.push(k);
        }
        if seeds.len() == want {
            break;
        }
    }
    seeds
}

fn nyquist(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let dmin = v.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    std::f64::consts::PI / dmin
}

fn best<I: IntoIterator<Item = Result<FitResult>>>(fits: I) -> Result<FitResult> {
    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for f in fits {
        match f {
            Ok(f) => {
                let better = match &best {
                    None => true,
                    Some(b) => (f.converged && !b.converged) || (f.converged == b.converged && f.residual_norm < b.residual_norm),
                };
                if better {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| validation("no fit attempted")))
}

/// `P(t) = offset + (A/2)·(1 − e^{−t/τ}·cos Ωt)`.
pub fn damped_rabi(t: f64, omega: f64, tau: f64, amplitude: f64, offset: f64) -> f64 {
    offset + 0.5 * amplitude * (1.0 - (-t / tau).exp() * (omega * t).cos())
}

/// Fits a damped Rabi flop. Parameters: `omega` (rad/s), `tau` (s),
/// `amplitude`, `offset`.
pub fn fit_damped_rabi(t: &[f64], p: &[f64], sigma: Option<&[f64]>) -> Result<FitResult> {
    if t.iter().any(|v| *v < 0.0) {
        return Err(validation("Rabi times must be non-negative"));
    }
    let ts = scale_of(t)?;
    let x: Vec<f64> = t.iter().map(|v| v / ts).collect();
    if x.len() < 5 {
        return Err(validation("a damped Rabi fit needs at least five points"));
    }
    let model = |x: f64, q: &[f64]| q[3] + 0.5 * q[2] * (1.0 - (-q[1] * x).exp() * (q[0] * x).cos());
    let k_min = 0.5 * TWO_PI / span(&x);
    let seeds = frequency_seeds(&x, p, k_min, nyquist(&x), 3);
    let ymin = p.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bounds = [(1e-9, f64::INFINITY), (0.0, 1e4), (0.0, 2.0), (-1.0, 1.0)];
    let opts = LsqOptions::default();
    let attempts = seeds.iter().flat_map(|&k| {
        [0.1, 1.0, 4.0].map(|g| least_squares(model, &x, p, sigma, &[k, g, (ymax - ymin).max(1e-3), ymin], Some(&bounds), &opts))
    });
    let raw = best(attempts)?;
    let (w, g) = (raw.params[0] / ts, raw.params[1] / ts);
    let (sw, sg) = (raw.std_errors[0] / ts, raw.std_errors[1] / ts);
    let mut fit = raw.clone();
    let tau = if g > 1.0 / TIME_SENTINEL { 1.0 / g } else { TIME_SENTINEL };
    if tau == TIME_SENTINEL {
        fit.notes.push("damping not resolved; tau set to sentinel".into());
    }
    fit.params = vec![w, tau, raw.params[2], raw.params[3]];
    fit.std_errors = vec![sw, if tau < TIME_SENTINEL { sg / (g * g) } else { f64::INFINITY }, raw.std_errors[2], raw.std_errors[3]];
    fit.model = Model::DampedRabi;
    Ok(fit.named(&["omega", "tau", "amplitude", "offset"]))
}

fn check_amplitudes(a: &[f64]) -> Result<()> {
    if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(validation("fringe amplitudes must lie in [0, 1]"));
    }
    Ok(())
}

/// Fits `A₀·exp(−T/T₂′)`. Parameters: `amplitude`, `t2` (s).
pub fn fit_ramsey_echo(t: &[f64], amp: &[f64], sigma: Option<&[f64]>) -> Result<FitResult> {
    check_amplitudes(amp)?;
    let ts = scale_of(t)?;
    let x: Vec<f64> = t.iter().map(|v| v / ts).collect();
    let model = |x: f64, q: &[f64]| q[0] * (-q[1] * x).exp();
    // Log-linear seed from positive points.
    let pts: Vec<(f64, f64)> = x.iter().zip(amp).filter(|(_, a)| **a > 1e-6).map(|(x, a)| (*x, a.ln())).collect();
    let seed_rate = if pts.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_least_squares(&[&|_| 1.0, &|x| x], &xs, &ys, None).map(|f| (-f.params[1]).max(0.0)).unwrap_or(1.0)
    } else {
        1.0
    };
    let a0 = amp.iter().copied().fold(0.0, f64::max).max(1e-3);
    let bounds = [(0.0, 2.0), (0.0, 1e6)];
    let opts = LsqOptions::default();
    let raw = best([seed_rate, 1.0, 0.0].map(|r| least_squares(model, &x, amp, sigma, &[a0, r], Some(&bounds), &opts)))?;
    let rate = raw.params[1] / ts;
    let srate = raw.std_errors[1] / ts;
    let mut fit = raw.clone();
    let t2 = if rate > 1.0 / TIME_SENTINEL { 1.0 / rate } else { TIME_SENTINEL };
    if t2 == TIME_SENTINEL {
        fit.notes.push("no decay resolved; t2 set to sentinel".into());
    }
    fit.params = vec![raw.params[0], t2];
    fit.std_errors = vec![raw.std_errors[0], if t2 < TIME_SENTINEL { srate / (rate * rate) } else { f64::INFINITY }];
    fit.model = Model::ExponentialDecay;
    Ok(fit.named(&["amplitude", "t2"]))
}

/// `α(T) = [1 + 0.95·(T/T₂*)²]^{−3/2}`.
pub fn ramsey_t2star_envelope(t: f64, t2star: f64) -> f64 {
    (1.0 + 0.95 * (t / t2star).powi(2)).powf(-1.5)
}

/// Whether the envelope is strictly decreasing over the (positive) grid.
pub fn envelope_strictly_decreasing(grid: &[f64], t2star: f64) -> bool {
    let mut g: Vec<f64> = grid.iter().copied().filter(|t| *t > 0.0).collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g.windows(2).all(|w| ramsey_t2star_envelope(w[1], t2star) < ramsey_t2star_envelope(w[0], t2star))
}

/// Fits `A·α(T)` with `α` the thermal Ramsey envelope. Parameters:
/// `t2star` (s), `amplitude` (fixed to 1 unless `free_amplitude`).
pub fn fit_ramsey_t2star(t: &[f64], amp: &[f64], sigma: Option<&[f64]>, free_amplitude: bool) -> Result<FitResult> {
    check_amplitudes(amp)?;
    let ts = scale_of(t)?;
    let x: Vec<f64> = t.iter().map(|v| v / ts).collect();
    let a0 = if free_amplitude { amp.iter().copied().fold(0.0, f64::max).max(1e-3) } else { 1.0 };
    // Seed T₂* at the first crossing of A·α(T₂*) ≈ 0.367·A.
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let target = a0 * 1.95f64.powf(-1.5);
    let seed = order.windows(2).find_map(|w| {
        let (i, j) = (w[0], w[1]);
        (amp[i] >= target && amp[j] < target).then(|| x[i] + (x[j] - x[i]) * (amp[i] - target) / (amp[i] - amp[j]))
    });
    let seed = seed.unwrap_or(0.5).max(1e-3);
    if !envelope_strictly_decreasing(&x, seed) {
        return Err(validation("envelope is not strictly decreasing on the fit grid"));
    }
    let opts = LsqOptions::default();
    let raw = if free_amplitude {
        let model = |x: f64, q: &[f64]| q[1] * ramsey_t2star_envelope(x, q[0]);
        let bounds = [(1e-6, 1e6), (0.0, 2.0)];
        best([seed, 0.3 * seed, 3.0 * seed].map(|s| least_squares(model, &x, amp, sigma, &[s, a0], Some(&bounds), &opts)))?
    } else {
        let model = |x: f64, q: &[f64]| ramsey_t2star_envelope(x, q[0]);
        let bounds = [(1e-6, 1e6)];
        let mut f = best([seed, 0.3 * seed, 3.0 * seed].map(|s| least_squares(model, &x, amp, sigma, &[s], Some(&bounds), &opts)))?;
        f.params.push(1.0);
        f.std_errors.push(0.0);
        f
    };
    let mut fit = raw.clone();
    fit.params[0] *= ts;
    fit.std_errors[0] *= ts;
    fit.model = Model::RamseyT2Star;
    Ok(fit.named(&["t2star", "amplitude"]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visibility {
    /// `√(c² + s²)/m`, clipped to `[0, 1]`.
    pub visibility: f64,
    pub std_error: f64,
    pub mean: f64,
    pub amplitude: f64,
    /// Fringe wavenumber in units of 1/x.
    pub wavenumber: f64,
    pub fit: FitResult,
}

fn visibility_from(fit: FitResult, k: f64, cov_scale: Option<f64>) -> Visibility {
    let (m, c, s) = (fit.params[0], fit.params[1], fit.params[2]);
    let amplitude = c.hypot(s);
    let raw = if m > 0.0 && amplitude > 1e-12 * m.abs().max(1.0) { amplitude / m } else { 0.0 };
    let visibility = raw.clamp(0.0, 1.0);
    // Linearized error of amplitude / mean.
    let sa = if amplitude > 0.0 {
        ((c * fit.std_errors[1]).powi(2) + (s * fit.std_errors[2]).powi(2)).sqrt() / amplitude
    } else {
        fit.std_errors[1].hypot(fit.std_errors[2])
    };
    let std_error = if m > 0.0 { ((sa / m).powi(2) + (raw * fit.std_errors[0] / m).powi(2)).sqrt() * cov_scale.unwrap_or(1.0) } else { f64::NAN };
    Visibility { visibility, std_error, mean: m, amplitude, wavenumber: k, fit }
}

/// Visibility of a fringe of known wavenumber (e.g. an analysis-phase scan,
/// `k = 1`): linear fit of `m + c·cos kx + s·sin kx`.
pub fn fringe_visibility_at(x: &[f64], y: &[f64], sigma: Option<&[f64]>, k: f64) -> Result<Visibility> {
    if x.len() < 4 {
        return Err(validation("a fringe needs at least four points"));
    }
    let mut fit = linear_least_squares(&[&|_| 1.0, &|x| (k * x).cos(), &|x| (k * x).sin()], x, y, sigma)?;
    fit.model = Model::Sinusoid;
    Ok(visibility_from(fit.named(&["mean", "cos", "sin"]), k, None))
}

/// Visibility of a fringe of unknown period: periodogram seed, then a
/// nonlinear fit of `m + c·cos kx + s·sin kx`.
pub fn fringe_visibility(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<Visibility> {
    if x.len() < 5 {
        return Err(validation("an unknown-period fringe needs at least five points"));
    }
    let sp = span(x);
    if !(sp > 0.0) {
        return Err(validation("fringe scan has zero span"));
    }
    let x0 = x.iter().copied().fold(f64::INFINITY, f64::min);
    let xs: Vec<f64> = x.iter().map(|v| (v - x0) / sp).collect();
    let seeds = frequency_seeds(&xs, y, 0.5 * TWO_PI, nyquist(&xs), 2);
    let lin = fringe_visibility_at(&xs, y, sigma, seeds[0])?;
    if lin.amplitude <= 1e-12 * lin.mean.abs().max(1.0) {
        let mut v = lin;
        v.wavenumber /= sp;
        return Ok(v);
    }
    let model = |x: f64, q: &[f64]| q[0] + q[1] * (q[3] * x).cos() + q[2] * (q[3] * x).sin();
    let opts = LsqOptions::default();
    let nl = best(seeds.iter().map(|&k| {
        let l = fringe_visibility_at(&xs, y, sigma, k)?;
        least_squares(model, &xs, y, sigma, &[l.fit.params[0], l.fit.params[1], l.fit.params[2], k], None, &opts)
    }))?;
    let k = nl.params[3];
    // cos/sin are referenced to the first scan point.
    let mut fit = nl.clone();
    fit.model = Model::Sinusoid;
    fit.params[3] = k / sp;
    fit.std_errors[3] = nl.std_errors[3] / sp;
    let fit = fit.named(&["mean", "cos", "sin", "wavenumber"]);
    Ok(visibility_from(fit, k / sp, None))
}

/// Fits `Π(θ) = P₀ + A·cos θ + B·cos 2θ`. Parameters: `p0`, `a`, `b`.
pub fn fit_parity(theta: &[f64], parity: &[f64], sigma: Option<&[f64]>) -> Result<FitResult> {
    if span(theta) < std::f64::consts::PI - 1e-9 {
        return Err(validation("parity scan must span at least one period of cos 2θ"));
    }
    let mut fit = linear_least_squares(&[&|_| 1.0, &|t: f64| t.cos(), &|t: f64| (2.0 * t).cos()], theta, parity, sigma)?;
    fit.model = Model::Parity;
    Ok(fit.named(&["p0", "a", "b"]))
}
