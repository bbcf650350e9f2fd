//! Seeded, splittable random streams.
//!
//! Every random draw in the crate goes through [`substream`], keyed by the
//! user seed plus a path of integers (purpose tag, run index, column index,
//! ...). Two draws with different paths are independent, and the result of
//! any draw does not depend on the order in which other streams are consumed,
//! so parallel generation reproduces serial generation bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream tags. Kept distinct so that, e.g., the pattern for run 3 never
/// shares a stream with the factors for run 3.
pub(crate) mod tag {
    pub const BERNOULLI: u64 = 0x6265_726e;
    pub const PER_COLUMN: u64 = 0x636f_6c73;
    pub const FACTORS: u64 = 0x6661_6374;
    pub const RUN: u64 = 0x7275_6e73;
    pub const PROBE: u64 = 0x7072_6f62;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and `path`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Independent generator for `(seed, path)`.
pub fn substream(seed: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
