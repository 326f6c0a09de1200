//! Seed fan-out. A master seed is split into independent ChaCha streams keyed
//! by a fixed label and an index, so that data generation, initial ensembles,
//! training and filter noise never share random draws.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Labels for the independent streams derived from a master seed.
pub mod label {
    pub const DATA: &str = "data";
    pub const INIT_ENSEMBLE: &str = "init-ensemble";
    pub const TRAINING: &str = "training";
    pub const FILTER_NOISE: &str = "filter-noise";
    pub const TRAJECTORY: &str = "trajectory";
    pub const TRUTH: &str = "truth";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Deterministic sub-seed for `(master, label, index)`.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(label.as_bytes())) ^ splitmix64(index.wrapping_add(1)))
}

pub fn substream(master: u64, label: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, label, index))
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}
