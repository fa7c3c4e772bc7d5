//! Estimation: least squares, curve fits, and the Bell-fidelity pipeline.

pub mod bell;
pub mod fits;
pub mod lsq;
pub mod synthetic;

pub use bell::{bell_fidelity, parity, BellEstimate, BellOptions, BellValues};
pub use fits::{
    damped_rabi, envelope_strictly_decreasing, fit_damped_rabi, fit_parity, fit_ramsey_echo, fit_ramsey_t2star,
    fringe_visibility, fringe_visibility_at, ramsey_t2star_envelope, Visibility, TIME_SENTINEL,
};
pub use lsq::{least_squares, linear_least_squares, FitResult, LsqOptions, Model};
