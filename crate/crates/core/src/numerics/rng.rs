//! Counter-based RNG streams keyed by `(master_seed, purpose, index)`.
//!
//! Every consumer of randomness derives its own stream, so results do not
//! depend on the order in which independent pieces of work run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

/// Deterministic stream for one purpose.
pub fn stream(master_seed: u64, purpose: &str, index: u64) -> Rng {
    let a = splitmix64(master_seed);
    let b = splitmix64(a ^ fnv1a(purpose));
    let c = splitmix64(b ^ index);
    let mut seed = [0u8; 32];
    for (i, word) in [a, b, c, splitmix64(c)].iter().enumerate() {
        seed[i * 8..(i + 1) * 8].copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
