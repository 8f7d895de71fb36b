//! Deterministic random streams.
//!
//! Every stochastic component draws from a ChaCha8 stream keyed by the
//! master seed plus a tuple of indices (pH point, replica, bootstrap
//! iteration, ...), so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream keyed by `(seed, keys...)`.
pub fn stream(seed: u64, keys: &[u64]) -> Rng {
    let id = keys.iter().fold(0x5151_u64, |acc, &k| splitmix64(acc ^ splitmix64(k)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// A 64-bit seed derived from `(seed, keys...)`, for handing to a sub-run.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    use rand::RngCore;
    stream(seed, keys).next_u64()
}
