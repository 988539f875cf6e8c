//! Keyed random streams. Every random draw in the pipeline comes from a
//! stream derived from a base seed and a tuple of integer keys, so results do
//! not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_seed(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x5EED_F00D_u64, |acc, &k| splitmix(acc ^ splitmix(k)))
}

pub fn stream_rng(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(keys))
}
