//! Per-shot random streams.
//!
//! Every shot, bootstrap resample and calibration realization draws from its
//! own ChaCha stream keyed by `(seed, stream)`, so results never depend on
//! execution order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ShotRng = ChaCha8Rng;

/// Stream namespaces; shot indices occupy the low range.
pub const BOOTSTRAP_STREAMS: u64 = 1 << 62;
pub const CALIBRATION_STREAMS: u64 = 1 << 61;

pub fn stream(seed: u64, stream: u64) -> ShotRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
