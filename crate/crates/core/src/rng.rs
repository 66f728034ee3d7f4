//! Seeded random streams.
//!
//! Every consumer of randomness derives its own stream from `(seed, purpose, index)`,
//! so adding a consumer never shifts another one's draws and a run resumed at step
//! `k` sees the same numbers as an uninterrupted run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a
    tag.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn stream(seed: u64, purpose: &str, index: u64) -> Rng {
    let mixed = splitmix(splitmix(seed ^ tag_hash(purpose)).wrapping_add(index));
    ChaCha8Rng::seed_from_u64(mixed)
}
