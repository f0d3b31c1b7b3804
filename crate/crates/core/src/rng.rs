//! Seed splitting.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by a 64-bit
//! seed. Child seeds are derived from a parent seed, a stream tag and an index
//! with a SplitMix64 finalizer, so runs that share a parent seed and index see
//! the same draws no matter which strategy or worker consumes them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Changing a value changes every derived draw.
pub mod stream {
    pub const FAILURE_TIMES: u64 = 0x01;
    pub const FAILED_SHARDS: u64 = 0x02;
    pub const DATASET: u64 = 0x03;
    pub const MODEL_INIT: u64 = 0x04;
    pub const SSU_EVICTION: u64 = 0x05;
    pub const RUN: u64 = 0x06;
    pub const EXPERIMENT: u64 = 0x07;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the `index`-th child seed of `parent` on stream `tag`.
pub fn derive_seed(parent: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ splitmix64(tag)).wrapping_add(index))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_tag_and_index() {
        let a = derive_seed(7, stream::FAILURE_TIMES, 0);
        assert_ne!(a, derive_seed(7, stream::FAILURE_TIMES, 1));
        assert_ne!(a, derive_seed(7, stream::FAILED_SHARDS, 0));
        assert_ne!(a, derive_seed(8, stream::FAILURE_TIMES, 0));
        assert_eq!(a, derive_seed(7, stream::FAILURE_TIMES, 0));
    }
}
