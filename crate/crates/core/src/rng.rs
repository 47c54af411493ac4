//! Deterministic random streams.
//!
//! Every source of randomness in the library is derived from one root seed
//! plus a stream label, so reseeding one component (e.g. data shuffling)
//! never perturbs another (e.g. noise sampling).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over the label bytes, mixed with the root seed.
fn mix(seed: u64, label: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    for &b in index.to_le_bytes().iter() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.rotate_left(17)
}

/// A named substream of the root seed.
pub fn substream(seed: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(seed, label, 0))
}

/// A named, indexed substream (e.g. one per epoch or per agent).
pub fn substream_indexed(seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(mix(seed, label, index.wrapping_add(1)))
}

/// A fresh seed derived from the root seed, for handing to components that
/// spin up their own substreams.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    use rand::RngCore;
    substream_indexed(seed, label, index).next_u64()
}
