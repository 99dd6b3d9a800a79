//! Counter-based seeding: every stream is a pure function of its coordinates,
//! so draws do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix(splitmix(seed) ^ salt.rotate_left(17))
}

/// Independent stream for a tuple of coordinates, e.g. `(run_seed, image, token)`.
pub fn stream(coords: &[u64]) -> ChaCha8Rng {
    let seed = coords.iter().fold(0x5647_5400_u64, |acc, &c| splitmix(acc ^ splitmix(c)));
    ChaCha8Rng::seed_from_u64(seed)
}
