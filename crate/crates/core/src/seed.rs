use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags so that independent consumers never share a seed.
pub(crate) mod stream {
    pub const NETWORK_INIT: u64 = 1;
    pub const CLASS_ORDER: u64 = 2;
    pub const PATTERN_ORDER: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const HEAD_INIT: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a tag into an independent seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(base) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
