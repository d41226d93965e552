//! Deterministic fan-out of one master seed into named per-component streams.
//!
//! Every stochastic component (splitting, weight init, triplet mining, random
//! projections, ...) seeds its own RNG from `stream_seed(master, label)`.
//! Streams are independent, so adding draws to one component does not perturb
//! the others.

/// Stream label for dataset splitting.
pub const SPLIT: &str = "split";
/// Stream label for network weight initialization.
pub const INIT: &str = "init";
/// Stream label for triplet mining.
pub const MINER: &str = "miner";
/// Stream label for random-projection hashing.
pub const LSH: &str = "lsh";
/// Stream label for synthetic dataset generation.
pub const SYNTH: &str = "synth";

/// Derives the seed of the stream `label` from a master seed.
///
/// The mapping (FNV-1a over the label, mixed through splitmix64) is fixed and
/// platform-independent.
pub fn stream_seed(master: u64, label: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(master ^ h)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
