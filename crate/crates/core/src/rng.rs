//! Hierarchical seed derivation.
//!
//! Every random stream in the crate is keyed by a path of integers below a
//! root seed (for example `[TRIAL, trial_index, board, column]`). Streams are
//! therefore independent of the order or thread in which they are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a path of stream keys into a child seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(root: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}
