//! Physical constants (SI) and unit helpers.

use std::f64::consts::PI;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const K_B: f64 = 1.380_649e-23;
/// Mass of a caesium-133 atom in kg.
pub const CS_MASS: f64 = 2.207e-25;

pub const TWO_PI: f64 = 2.0 * PI;

/// Converts a frequency in MHz to an angular frequency in rad/s.
pub fn mhz(f: f64) -> f64 {
    TWO_PI * f * 1e6
}

/// Converts a frequency in kHz to an angular frequency in rad/s.
pub fn khz(f: f64) -> f64 {
    TWO_PI * f * 1e3
}

pub const US: f64 = 1e-6;
pub const MS: f64 = 1e-3;
pub const NS: f64 = 1e-9;
