//! Named, splittable random streams.
//!
//! Every randomized routine in this crate draws from a stream derived from a
//! single user-facing seed plus a label ("pi", "component/2", ...). Streams
//! with different labels are statistically independent, and the derivation is
//! a fixed integer mix, so results are reproducible across platforms and
//! across the `parallel` feature being on or off.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapses `(seed, label)` into a single stream seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = splitmix64(seed);
    for &b in label.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    // One extra round so "" and short labels are still well mixed.
    splitmix64(h)
}

/// Returns the random stream for `label` under `seed`.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, label))
}
