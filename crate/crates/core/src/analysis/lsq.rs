//! Bounded Levenberg–Marquardt and weighted linear least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};

/// Model family a [`FitResult`] belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Custom,
    Linear,
    DampedRabi,
    ExponentialDecay,
    RamseyT2Star,
    Sinusoid,
    Parity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: Model,
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `‖W(y − f)‖₂`.
    pub residual_norm: f64,
    pub dof: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Free-text diagnostics (sentinels, rank deficiency, ...).
    pub notes: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.std_errors[i])
    }

    pub fn reduced_chi2(&self) -> f64 {
        self.residual_norm.powi(2) / self.dof.max(1) as f64
    }

    pub(crate) fn named(mut self, names: &[&str]) -> Self {
        self.names = names.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Clone, Debug)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Relative cost change regarded as converged.
    pub ftol: f64,
    /// Relative step size regarded as converged.
    pub xtol: f64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        LsqOptions { max_iterations: 500, ftol: 1e-15, xtol: 1e-12 }
    }
}

fn check_data(x: &[f64], y: &[f64], sigma: Option<&[f64]>, m: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return Err(validation(format!("x has {} points, y has {}", x.len(), y.len())));
    }
    if x.len() < m {
        return Err(validation(format!("{} points cannot determine {m} parameters", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(validation("data contain non-finite values"));
    }
    match sigma {
        None => Ok(vec![1.0; x.len()]),
        Some(s) => {
            if s.len() != x.len() {
                return Err(validation("sigma length differs from data length"));
            }
            if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(validation("sigma must be finite and positive"));
            }
            Ok(s.iter().map(|v| 1.0 / v).collect())
        }
    }
}

/// Covariance scale `χ²/dof` times `(JᵀJ)⁻¹`, plus a rank check.
fn errors_from_jacobian(j: &DMatrix<f64>, cost: f64, dof: usize) -> (Vec<f64>, bool) {
    let m = j.ncols();
    let svd = j.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-8 * smax {
        return (vec![f64::NAN; m], false);
    }
    let vt = svd.v_t.expect("v_t requested");
    let s2 = cost / dof.max(1) as f64;
    let errs = (0..m)
        .map(|k| {
            let var: f64 = (0..m).map(|i| (vt[(i, k)] / svd.singular_values[i]).powi(2)).sum();
            (var * s2).sqrt()
        })
        .collect();
    (errs, true)
}

/// Bounded Levenberg–Marquardt on `y ≈ model(x, p)`.
///
/// Parameters are expected to be of order one; the finite-difference step
/// is `1e-7·max(|p|, 1)`. `sigma` gives per-point standard errors (weights
/// `1/σ`). Bounds are enforced by projection.
pub fn least_squares<F>(
    model: F,
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    p0: &[f64],
    bounds: Option<&[(f64, f64)]>,
    opts: &LsqOptions,
) -> Result<FitResult>
where
    F: Fn(f64, &[f64]) -> f64,
{
    let m = p0.len();
    let w = check_data(x, y, sigma, m)?;
    let n = x.len();
    let bounds: Vec<(f64, f64)> = match bounds {
        Some(b) if b.len() == m => b.to_vec(),
        Some(_) => return Err(validation("bounds length differs from parameter count")),
        None => vec![(f64::NEG_INFINITY, f64::INFINITY); m],
    };
    if p0.iter().any(|v| !v.is_finite()) {
        return Err(validation("initial guess is not finite"));
    }
    let clamp = |p: &mut [f64]| {
        for (v, (lo, hi)) in p.iter_mut().zip(&bounds) {
            *v = v.clamp(*lo, *hi);
        }
    };
    let residuals = |p: &[f64]| -> DVector<f64> { DVector::from_iterator(n, (0..n).map(|i| w[i] * (y[i] - model(x[i], p)))) };
    let jacobian = |p: &[f64]| -> DMatrix<f64> {
        let mut j = DMatrix::zeros(n, m);
        let mut q = p.to_vec();
        for k in 0..m {
            let h = 1e-7 * p[k].abs().max(1.0);
            let (lo, hi) = bounds[k];
            let (a, b) = if p[k] + h > hi {
                (p[k] - h, p[k])
            } else if p[k] - h < lo {
                (p[k], p[k] + h)
            } else {
                (p[k] - h, p[k] + h)
            };
            for i in 0..n {
                q[k] = b;
                let fb = model(x[i], &q);
                q[k] = a;
                let fa = model(x[i], &q);
                j[(i, k)] = w[i] * (fb - fa) / (b - a);
            }
            q[k] = p[k];
        }
        j
    };

    let mut p = p0.to_vec();
    clamp(&mut p);
    let mut r = residuals(&p);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(validation("model is not finite at the initial guess"));
    }
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    let mut notes = Vec::new();

    while iterations < opts.max_iterations {
        iterations += 1;
        let j = jacobian(&p);
        let a = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() <= 1e-300 || cost == 0.0 {
            converged = true;
            break;
        }
        let dmax = a.diagonal().max().max(1e-300);
        let mut accepted = false;
        while lambda < 1e20 {
            let mut lhs = a.clone();
            for k in 0..m {
                lhs[(k, k)] += lambda * a[(k, k)].max(1e-12 * dmax);
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 4.0;
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut trial);
            let rt = residuals(&trial);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                let rel_step = p
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| (a - b).abs() / a.abs().max(1e-12))
                    .fold(0.0, f64::max);
                let rel_cost = (cost - ct) / cost.max(1e-300);
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel_cost <= opts.ftol || rel_step <= opts.xtol {
                    converged = true;
                }
                break;
            }
            lambda *= 2.0;
        }
        if !accepted {
            // No downhill step at any damping: a (bounded) stationary point.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    if !converged {
        notes.push(format!("iteration limit {} reached", opts.max_iterations));
    }
    let j = jacobian(&p);
    let dof = n - m;
    let (std_errors, full_rank) = errors_from_jacobian(&j, cost, dof);
    if !full_rank {
        converged = false;
        notes.push("singular Jacobian at the optimum".into());
    }
    if p.iter().any(|v| !v.is_finite()) {
        converged = false;
    }
    Ok(FitResult {
        model: Model::Custom,
        names: (0..m).map(|k| format!("p{k}")).collect(),
        params: p,
        std_errors,
        residual_norm: cost.sqrt(),
        dof,
        converged,
        iterations,
        notes,
    })
}

/// Weighted linear least squares `y ≈ Σ_k p_k·basis_k(x)`, solved by SVD.
pub fn linear_least_squares(
    basis: &[&dyn Fn(f64) -> f64],
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
) -> Result<FitResult> {
    let m = basis.len();
    let w = check_data(x, y, sigma, m)?;
    let n = x.len();
    let a = DMatrix::from_fn(n, m, |i, k| w[i] * basis[k](x[i]));
    let b = DVector::from_iterator(n, (0..n).map(|i| w[i] * y[i]));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = 1e-12 * smax;
    let sol = svd.solve(&b, eps).map_err(|e| validation(e.to_string()))?;
    let cost = (&a * &sol - &b).norm_squared();
    let (std_errors, full_rank) = errors_from_jacobian(&a, cost, n - m);
    let mut notes = Vec::new();
    if !full_rank {
        notes.push("design matrix is rank deficient".into());
    }
    Ok(FitResult {
        model: Model::Linear,
        names: (0..m).map(|k| format!("p{k}")).collect(),
        params: sol.iter().copied().collect(),
        std_errors,
        residual_norm: cost.sqrt(),
        dof: n - m,
        converged: full_rank,
        iterations: 1,
        notes,
    })
}
