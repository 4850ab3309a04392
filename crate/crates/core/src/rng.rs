//! Seeded random streams.
//!
//! Every draw in the crate goes through a ChaCha20 generator keyed by a
//! `(seed, stream)` pair, so independent consumers of the same seed never
//! share state and results do not depend on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Stream identifiers used by the built-in consumers of a run seed.
pub mod streams {
    pub const GROUND_TRUTH: u64 = 1;
    pub const OBSERVATION: u64 = 2;
    pub const SOLVER_INIT: u64 = 3;
    pub const MASK: u64 = 4;
    pub const TRAINING: u64 = 5;
    pub const ORACLE: u64 = 6;
    pub const CALIBRATION: u64 = 7;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}
