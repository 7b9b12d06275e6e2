//! Deterministic random-stream derivation.
//!
//! Every run is driven by one 64-bit seed. Independent streams (per chain,
//! per replicate, per observation lane) are derived by folding a path of
//! indices into the seed with the SplitMix64 finaliser and seeding a ChaCha8
//! generator from the result. A stream depends only on `(seed, path)`, so the
//! same draws come out whether chains or replicates run in parallel or
//! serially.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SamplerRng = ChaCha8Rng;

/// Stream tags used by the library.
pub mod tag {
    pub const DATA: u64 = 0x_da7a;
    pub const CHAIN: u64 = 0x_c4a1;
    pub const REPLICATE: u64 = 0x_7e91;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn substream(seed: u64, path: &[u64]) -> SamplerRng {
    SamplerRng::seed_from_u64(derive_seed(seed, path))
}
