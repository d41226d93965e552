//! Fixture generators shared by the criterion benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use milan_core::hashing::{words_for, HammingIndex, HashCode};

/// A random code archive of `n` items with `bits`-bit codes.
pub fn random_index(n: usize, bits: usize, seed: u64) -> HammingIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<HashCode> = (0..n).map(|_| random_code(&mut rng, bits)).collect();
    HammingIndex::build((0..n as u64).collect(), &codes, None).expect("valid fixture")
}

pub fn random_code(rng: &mut ChaCha8Rng, bits: usize) -> HashCode {
    let mut words = vec![0u64; words_for(bits)];
    for w in &mut words {
        *w = rng.random();
    }
    let tail = bits % 64;
    if tail != 0 {
        let last = words.len() - 1;
        words[last] &= (1u64 << tail) - 1;
    }
    HashCode::from_words(words, bits).expect("pad bits masked")
}

/// A flat row-major random feature matrix.
pub fn random_matrix(n: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect()
}
