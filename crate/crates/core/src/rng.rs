use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a seed with a stream tag so independent consumers never share a stream.
pub fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tag))
}

/// Stream tags.
pub mod tags {
    pub const TEXT_TOKEN: u64 = 0x7465_7874;
    pub const TEXT_POSITION: u64 = 0x706f_7369;
    pub const TEXT_LAYER: u64 = 0x6c61_7972;
    pub const VISION_PATCH: u64 = 0x7061_7463;
    pub const VISION_GLOBAL: u64 = 0x676c_6f62;
    pub const INIT: u64 = 0x696e_6974;
    pub const DATA: u64 = 0x6461_7461;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const NEGATIVE: u64 = 0x6e65_6761;
    pub const EVAL: u64 = 0x6576_616c;
    pub const GRADCHECK: u64 = 0x6763_686b;
    pub const CONCEPTS: u64 = 0x636f_6e63;
}
