//! Seeded randomness and seed stream-splitting.
//!
//! Every consumer of randomness receives its own generator derived from a
//! single run seed and a stream label, so toggling one consumer (say,
//! augmentation) never perturbs the draws seen by another (initialization).
//!
//! | stream        | consumer                              |
//! |---------------|---------------------------------------|
//! | `init`        | parameter initialization              |
//! | `batching`    | per-epoch shuffling                   |
//! | `dropout`     | dropout masks                         |
//! | `augment`     | training-time augmentation            |
//! | `split`       | train/val/test assignment             |
//! | `generator`   | synthetic datasets, noise for GAN/VAE |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for the named stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    // FNV-1a over the label, then mixed with the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(seed) ^ h)
}

/// Derives a seed from a base seed and a sequence of integer coordinates
/// (epoch, batch, example index, ...).
pub fn derive_indexed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream_rng(seed: u64, stream: &str) -> SeededRng {
    rng_from_seed(derive_seed(seed, stream))
}

pub fn standard_normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}
