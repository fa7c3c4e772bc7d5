//! Loss-corrected Bell-state fidelity from a blow-away parity scan and a
//! recapture calibration, with bootstrap uncertainties.
//!
//! Pipeline, for a scan of the global analysis rotation angle θ:
//!
//! 1. per-atom loss `L_i = 1 − 2⟨presence_i⟩_θ`;
//! 2. total loss `L_t = L₁ + L₂ − L₁L₂`;
//! 3. `P₀₀`, `P₁₁` from the both-present curve
//!    `P_b(θ) = a₀ + a₁ cos θ + a₂ cos 2θ` at θ = 0 and θ = π;
//! 4. `P₀₁ + P₁₀ = 1 − P₀₀ − P₁₁ − L_t`;
//! 5. `ℛ = (8⟨P_b⟩ − (P₀₁+P₁₀) − 3(P₀₀+P₁₁))/2`, cross-checked against the
//!    parity fit `Π = P₀ + A cos θ + B cos 2θ` through
//!    `ℛ = (P₀₀ + P₁₁ − (P₀₁+P₁₀))/2 − B`;
//! 6. `F = (P₀₁+P₁₀)/2 + ℛ`;
//! 7. `F_pairs = F / p_recap`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fits::fit_parity;
use super::lsq::linear_least_squares;
use super::synthetic::sampled_counts;
use crate::constants::TWO_PI;
use crate::detection::{recapture_probability, Counts, CountsTable};
use crate::error::{validation, Result};
use crate::rng::{self, BOOTSTRAP_STREAMS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellOptions {
    pub resamples: usize,
    /// Read `P₀₀`, `P₁₁` from the θ = 0, π bins instead of the fitted curve.
    pub raw_bins: bool,
    /// Binomial weights in the fits.
    pub weighted: bool,
    pub seed: u64,
}

impl Default for BellOptions {
    fn default() -> Self {
        BellOptions { resamples: 1000, raw_bins: false, weighted: true, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BellValues {
    pub p00: f64,
    pub p11: f64,
    pub p01_plus_p10: f64,
    /// `ℛ(ρ₀₁,₁₀)` from the θ-averaged both-present probability.
    pub re_coherence: f64,
    /// `ℛ(ρ₀₁,₁₀)` from the parity fit.
    pub re_coherence_parity: f64,
    pub loss1: f64,
    pub loss2: f64,
    pub loss_total: f64,
    pub mean_both: f64,
    pub parity_p0: f64,
    pub parity_a: f64,
    pub parity_b: f64,
    pub fidelity: f64,
    pub fidelity_pairs: f64,
    pub p_recap: f64,
}

const FIELDS: usize = 15;

impl BellValues {
    fn to_array(self) -> [f64; FIELDS] {
        [
            self.p00,
            self.p11,
            self.p01_plus_p10,
            self.re_coherence,
            self.re_coherence_parity,
            self.loss1,
            self.loss2,
            self.loss_total,
            self.mean_both,
            self.parity_p0,
            self.parity_a,
            self.parity_b,
            self.fidelity,
            self.fidelity_pairs,
            self.p_recap,
        ]
    }

    fn from_array(a: [f64; FIELDS]) -> Self {
        BellValues {
            p00: a[0],
            p11: a[1],
            p01_plus_p10: a[2],
            re_coherence: a[3],
            re_coherence_parity: a[4],
            loss1: a[5],
            loss2: a[6],
            loss_total: a[7],
            mean_both: a[8],
            parity_p0: a[9],
            parity_a: a[10],
            parity_b: a[11],
            fidelity: a[12],
            fidelity_pairs: a[13],
            p_recap: a[14],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellEstimate {
    #[serde(flatten)]
    pub value: BellValues,
    /// Bootstrap standard deviations of every field.
    pub std_error: BellValues,
    pub resamples: usize,
    /// `|ℛ − ℛ_parity|` in units of its bootstrap standard deviation.
    pub coherence_discrepancy_sigma: f64,
    /// False when the two coherence estimates differ by more than 3σ.
    pub coherence_consistent: bool,
    pub warnings: Vec<String>,
}

/// Parity of a (sub-normalized) probability vector `[P₀₀, P₀₁, P₁₀, P₁₁]`.
pub fn parity(p: [f64; 4]) -> f64 {
    p[0] + p[3] - p[1] - p[2]
}

fn near(theta: f64, target: f64) -> bool {
    let d = (theta - target).rem_euclid(TWO_PI);
    d.min(TWO_PI - d) < 1e-9
}

fn point(scan: &CountsTable, recap: &CountsTable, opts: &BellOptions, warnings: &mut Vec<String>) -> Result<BellValues> {
    if !scan.blowaway() {
        return Err(validation("Bell scan must be taken with blow-away"));
    }
    let rows: Vec<(f64, &Counts)> = scan.rows().filter(|(_, c)| c.total() > 0).collect();
    if rows.len() < 4 {
        return Err(validation("Bell scan needs at least four θ points"));
    }
    let theta: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let n: Vec<f64> = rows.iter().map(|r| r.1.total() as f64).collect();
    let pb: Vec<f64> = rows.iter().map(|r| r.1.fraction_both()).collect();
    let pr1: Vec<f64> = rows.iter().map(|r| r.1.fraction_present(0)).collect();
    let pr2: Vec<f64> = rows.iter().map(|r| r.1.fraction_present(1)).collect();
    let m = theta.len() as f64;

    let sig_b: Vec<f64> = rows
        .iter()
        .map(|(_, c)| {
            let n = c.total() as f64;
            let q = (c.both as f64 + 0.5) / (n + 1.0);
            (q * (1.0 - q) / n).sqrt()
        })
        .collect();
    let fit_b = linear_least_squares(
        &[&|_| 1.0, &|t: f64| t.cos(), &|t: f64| (2.0 * t).cos()],
        &theta,
        &pb,
        opts.weighted.then_some(sig_b.as_slice()),
    )?;
    let (a0, a1, a2) = (fit_b.params[0], fit_b.params[1], fit_b.params[2]);

    let loss1 = 1.0 - 2.0 * pr1.iter().sum::<f64>() / m;
    let loss2 = 1.0 - 2.0 * pr2.iter().sum::<f64>() / m;
    let loss_total = loss1 + loss2 - loss1 * loss2;

    let bin = |target: f64| theta.iter().position(|&t| near(t, target)).map(|i| pb[i]);
    let (mut p00, mut p11) = (a0 + a1 + a2, a0 - a1 + a2);
    let (mean_both, missing) = if opts.raw_bins {
        let mut missing = false;
        match bin(0.0) {
            Some(v) => p00 = v,
            None => missing = true,
        }
        match bin(std::f64::consts::PI) {
            Some(v) => p11 = v,
            None => missing = true,
        }
        (pb.iter().sum::<f64>() / m, missing)
    } else {
        (a0, bin(0.0).is_none() || bin(std::f64::consts::PI).is_none())
    };
    if missing {
        let w = "θ grid lacks 0 or π; P00/P11 interpolated from the fitted curve".to_string();
        if !warnings.contains(&w) {
            warnings.push(w);
        }
    }
    let s = 1.0 - p00 - p11 - loss_total;
    let re_coherence = (8.0 * mean_both - s - 3.0 * (p00 + p11)) / 2.0;

    let par: Vec<f64> = (0..rows.len()).map(|i| 1.0 - 2.0 * pr1[i] - 2.0 * pr2[i] + 4.0 * pb[i]).collect();
    let sig_p: Vec<f64> = par.iter().zip(&n).map(|(p, n)| ((1.0 - p * p).max(0.0) + 1.0 / n).sqrt() / n.sqrt()).collect();
    let fit_p = fit_parity(&theta, &par, opts.weighted.then_some(sig_p.as_slice()))?;
    let (pp0, pa, pbb) = (fit_p.params[0], fit_p.params[1], fit_p.params[2]);
    let re_coherence_parity = (p00 + p11 - s) / 2.0 - pbb;

    let fidelity = s / 2.0 + re_coherence;
    let p_recap = recapture_probability(recap)?;
    Ok(BellValues {
        p00,
        p11,
        p01_plus_p10: s,
        re_coherence,
        re_coherence_parity,
        loss1,
        loss2,
        loss_total,
        mean_both,
        parity_p0: pp0,
        parity_a: pa,
        parity_b: pbb,
        fidelity,
        fidelity_pairs: fidelity / p_recap,
        p_recap,
    })
}

fn resample_table(t: &CountsTable, rng: &mut rng::ShotRng) -> CountsTable {
    CountsTable::from_rows(
        t.blowaway(),
        t.rows().map(|(x, c)| {
            let n = c.total();
            let p = [c.both, c.only1, c.only2, c.none].map(|k| k as f64 / n.max(1) as f64);
            (x, sampled_counts(p, n, rng))
        }),
    )
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Runs the full pipeline with bootstrap errors (resampling shots within
/// every scan point and the recapture calibration).
pub fn bell_fidelity(scan: &CountsTable, recap: &CountsTable, opts: &BellOptions) -> Result<BellEstimate> {
    let mut warnings = Vec::new();
    let value = point(scan, recap, opts, &mut warnings)?;
    let boots: Vec<BellValues> = (0..opts.resamples as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(opts.seed, BOOTSTRAP_STREAMS + b);
            let s = resample_table(scan, &mut r);
            let c = resample_table(recap, &mut r);
            point(&s, &c, opts, &mut Vec::new())
        })
        .collect::<Result<_>>()?;
    let cols: Vec<[f64; FIELDS]> = boots.iter().map(|b| b.to_array()).collect();
    let std_error = BellValues::from_array(std::array::from_fn(|k| std_dev(&cols.iter().map(|c| c[k]).collect::<Vec<_>>())));
    let diffs: Vec<f64> = boots.iter().map(|b| b.re_coherence - b.re_coherence_parity).collect();
    let diff = value.re_coherence - value.re_coherence_parity;
    let sd = std_dev(&diffs);
    let coherence_discrepancy_sigma = if sd > 0.0 {
        diff.abs() / sd
    } else if diff.abs() < 1e-9 {
        0.0
    } else {
        f64::INFINITY
    };
    let coherence_consistent = coherence_discrepancy_sigma <= 3.0;
    if !coherence_consistent {
        warnings.push(format!("coherence estimates disagree by {coherence_discrepancy_sigma:.1}σ"));
    }
    Ok(BellEstimate { value, std_error, resamples: opts.resamples, coherence_discrepancy_sigma, coherence_consistent, warnings })
}
