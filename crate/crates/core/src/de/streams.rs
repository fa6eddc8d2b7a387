//! Deterministic per-task random streams.
//!
//! Every random draw in a run comes from a ChaCha8 generator seeded by
//! mixing the run seed with a purpose tag and task coordinates, so work
//! can be split across threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_INIT: u64 = 0x494e_4954;
pub const TAG_GENERATION: u64 = 0x4745_4e45;
pub const TAG_RANDOM_SEARCH: u64 = 0x5253_4541;
pub const TAG_SWEEP: u64 = 0x5357_4550;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let x = splitmix64(seed ^ splitmix64(tag));
    let x = splitmix64(x ^ a);
    splitmix64(x ^ b.rotate_left(32))
}

pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, tag, a, b))
}
