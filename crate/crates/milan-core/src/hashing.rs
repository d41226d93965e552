//! Bit-packed binary codes, exact Hamming top-k search over a code archive,
//! sign-random-projection hashing, and the raw-feature baselines (Euclidean
//! and thresholded-Hamming nearest neighbour).
//!
//! Codes pack into 64-bit words with little-endian bit order; pad bits beyond
//! the code length are kept zero, so XOR + popcount needs no masking.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const CODES_MAGIC: &[u8; 5] = b"HCOD1";

/// Number of 64-bit words needed for `len` bits.
pub fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

/// A fixed-length binary code packed into u64 words.
///
/// Bit `i` lives in word `i / 64` at position `i % 64`. Pad bits beyond
/// `len` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HashCode {
    len: usize,
    words: Vec<u64>,
}

impl HashCode {
    /// All-zero code of `len` bits.
    pub fn zeros(len: usize) -> Self {
        debug_assert!(len > 0);
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut code = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                code.words[i / 64] |= 1u64 << (i % 64);
            }
        }
        code
    }

    /// Wraps packed words, rejecting nonzero pad bits or a zero length.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Validation("code length must be positive".into()));
        }
        if words.len() != words_for(len) {
            return Err(Error::Validation(format!(
                "{} words cannot hold exactly {len} bits",
                words.len()
            )));
        }
        let tail = len % 64;
        if tail != 0 && words[words.len() - 1] >> tail != 0 {
            return Err(Error::Validation(
                "nonzero pad bits beyond the code length".into(),
            ));
        }
        Ok(Self { len, words })
    }

    /// Code length K in bits.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Fraction of bits set, in [0, 1].
    pub fn ones_fraction(&self) -> f64 {
        f64::from(self.count_ones()) / self.len as f64
    }
}

/// Thresholds an embedding at 0.5: bit `i` is 1 iff `v[i] >= 0.5`
/// (the boundary value maps to 1).
pub fn binarize(v: &[f64]) -> HashCode {
    let mut code = HashCode::zeros(v.len());
    for (i, &x) in v.iter().enumerate() {
        if x >= 0.5 {
            code.words[i / 64] |= 1u64 << (i % 64);
        }
    }
    code
}

/// The same thresholding rule applied directly to raw features (K = D).
pub fn baseline_binarize_raw(g: &[f32]) -> HashCode {
    let mut code = HashCode::zeros(g.len());
    for (i, &x) in g.iter().enumerate() {
        if x >= 0.5 {
            code.words[i / 64] |= 1u64 << (i % 64);
        }
    }
    code
}

/// Number of differing bits, via XOR + popcount over the packed words.
pub fn hamming_distance(a: &HashCode, b: &HashCode) -> Result<u32> {
    if a.len != b.len {
        return Err(Error::Validation(format!(
            "code lengths differ: {} vs {}",
            a.len, b.len
        )));
    }
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

/// An immutable archive of equal-length codes searchable by Hamming distance.
///
/// Queries are safe to run concurrently.
#[derive(Debug, Clone)]
pub struct HammingIndex {
    code_len: usize,
    words_per_code: usize,
    ids: Vec<u64>,
    words: Vec<u64>,
    labels: Option<Vec<u32>>,
}

impl HammingIndex {
    /// Builds an index from parallel ids and codes. Ids must be unique and
    /// codes must share one length; labels, when given, are carried along for
    /// evaluation.
    pub fn build(ids: Vec<u64>, codes: &[HashCode], labels: Option<Vec<u32>>) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::Validation("cannot build an empty index".into()));
        }
        if ids.len() != codes.len() {
            return Err(Error::Validation(format!(
                "{} ids for {} codes",
                ids.len(),
                codes.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != codes.len() {
                return Err(Error::Validation("labels do not match the codes".into()));
            }
        }
        let code_len = codes[0].len;
        if codes.iter().any(|c| c.len != code_len) {
            return Err(Error::Validation("codes have mixed lengths".into()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Validation(format!("duplicate id {dup}")));
        }
        let words_per_code = words_for(code_len);
        let mut words = Vec::with_capacity(codes.len() * words_per_code);
        for c in codes {
            words.extend_from_slice(&c.words);
        }
        Ok(Self {
            code_len,
            words_per_code,
            ids,
            words,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Mean over the archive of each code's fraction of set bits.
    pub fn mean_ones_fraction(&self) -> f64 {
        let total: u64 = self.words.iter().map(|w| u64::from(w.count_ones())).sum();
        total as f64 / (self.len() * self.code_len) as f64
    }

    /// Exhaustive top-k search: the `k` archive entries with the smallest
    /// distances (all of them if `k` exceeds the archive), ascending, ties
    /// broken by ascending id.
    pub fn search_topk(&self, query: &HashCode, k: usize) -> Result<Vec<(u64, u32)>> {
        if k == 0 {
            return Err(Error::Validation("k must be at least 1".into()));
        }
        if query.len != self.code_len {
            return Err(Error::Validation(format!(
                "query has {} bits, archive holds {}-bit codes",
                query.len, self.code_len
            )));
        }
        let k_eff = k.min(self.len());
        // max-heap over (distance, id) keeps the k smallest pairs
        let mut heap = std::collections::BinaryHeap::with_capacity(k_eff + 1);
        for (pos, chunk) in self.words.chunks_exact(self.words_per_code).enumerate() {
            let dist: u32 = chunk
                .iter()
                .zip(&query.words)
                .map(|(a, b)| (a ^ b).count_ones())
                .sum();
            let key = (dist, self.ids[pos]);
            if heap.len() < k_eff {
                heap.push(key);
            } else if key < *heap.peek().expect("non-empty heap") {
                heap.pop();
                heap.push(key);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|(dist, id)| (id, dist))
            .collect())
    }
}

/// Sign-random-projection hasher: `n` projection vectors drawn once from a
/// standard Gaussian; bit `j` of a code is 1 iff `w_j . x >= 0`.
#[derive(Debug, Clone)]
pub struct LshHasher {
    dim: usize,
    bits: usize,
    projections: Vec<f64>,
}

impl LshHasher {
    pub fn new(dim: usize, bits: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config(
                "projection dimension must be positive".into(),
            ));
        }
        if bits == 0 {
            return Err(Error::Config("need at least one projection".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projections = (0..dim * bits)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Ok(Self {
            dim,
            bits,
            projections,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn encode(&self, x: &[f32]) -> Result<HashCode> {
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        self.encode_f64(&x)
    }

    pub fn encode_f64(&self, x: &[f64]) -> Result<HashCode> {
        if x.len() != self.dim {
            return Err(Error::Validation(format!(
                "input has {} components, hasher expects {}",
                x.len(),
                self.dim
            )));
        }
        let mut code = HashCode::zeros(self.bits);
        for j in 0..self.bits {
            let row = &self.projections[j * self.dim..(j + 1) * self.dim];
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            if dot >= 0.0 {
                code.words[j / 64] |= 1u64 << (j % 64);
            }
        }
        Ok(code)
    }
}

/// Exact Euclidean top-k over a flat row-major feature matrix. Returns
/// `(row index, distance)` ascending, ties broken by ascending index.
pub fn euclidean_topk(
    features: &[f32],
    dim: usize,
    query: &[f32],
    k: usize,
) -> Result<Vec<(u64, f64)>> {
    if dim == 0 || features.is_empty() || !features.len().is_multiple_of(dim) {
        return Err(Error::Validation("feature matrix shape is invalid".into()));
    }
    if query.len() != dim {
        return Err(Error::Validation(format!(
            "query has {} components, archive rows have {dim}",
            query.len()
        )));
    }
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    let n = features.len() / dim;
    let k_eff = k.min(n);
    // squared distances are non-negative, so their IEEE bit patterns order
    // like the values themselves
    let mut heap = std::collections::BinaryHeap::with_capacity(k_eff + 1);
    for (pos, row) in features.chunks_exact(dim).enumerate() {
        let mut d = 0.0f64;
        for (a, b) in row.iter().zip(query) {
            let diff = f64::from(*a) - f64::from(*b);
            d += diff * diff;
        }
        let key = (d.to_bits(), pos as u64);
        if heap.len() < k_eff {
            heap.push(key);
        } else if key < *heap.peek().expect("non-empty heap") {
            heap.pop();
            heap.push(key);
        }
    }
    Ok(heap
        .into_sorted_vec()
        .into_iter()
        .map(|(bits, id)| (id, f64::from_bits(bits).sqrt()))
        .collect())
}

/// Writes an id -> code archive: `"HCOD1"` | N u64 | K u64 | per item
/// (id u64, ceil(K/64) words u64), all LE.
pub fn save_codes(path: impl AsRef<Path>, ids: &[u64], codes: &[HashCode]) -> Result<()> {
    if ids.len() != codes.len() {
        return Err(Error::Validation(format!(
            "{} ids for {} codes",
            ids.len(),
            codes.len()
        )));
    }
    if codes.is_empty() {
        return Err(Error::Validation(
            "refusing to write an empty code file".into(),
        ));
    }
    let code_len = codes[0].len;
    if codes.iter().any(|c| c.len != code_len) {
        return Err(Error::Validation("codes have mixed lengths".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CODES_MAGIC)?;
    w.write_all(&(codes.len() as u64).to_le_bytes())?;
    w.write_all(&(code_len as u64).to_le_bytes())?;
    for (id, code) in ids.iter().zip(codes) {
        w.write_all(&id.to_le_bytes())?;
        for word in &code.words {
            w.write_all(&word.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a code archive written by [`save_codes`].
pub fn load_codes(path: impl AsRef<Path>) -> Result<(Vec<u64>, Vec<HashCode>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file truncated".into()))?;
    if &magic != CODES_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {CODES_MAGIC:?}"
        )));
    }
    let n = read_u64(&mut r)? as usize;
    let code_len = read_u64(&mut r)? as usize;
    if code_len == 0 {
        return Err(Error::Format("code length must be positive".into()));
    }
    let wpc = words_for(code_len);
    let mut ids = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(n);
    for _ in 0..n {
        ids.push(read_u64(&mut r)?);
        let mut words = vec![0u64; wpc];
        for word in &mut words {
            *word = read_u64(&mut r)?;
        }
        codes.push(
            HashCode::from_words(words, code_len)
                .map_err(|_| Error::Format("nonzero pad bits in stored code".into()))?,
        );
    }
    Ok((ids, codes))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("file truncated".into()))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Naive per-bit distance, the oracle for the packed implementation.
    fn naive_hamming(a: &HashCode, b: &HashCode) -> u32 {
        (0..a.len()).filter(|&i| a.bit(i) != b.bit(i)).count() as u32
    }

    fn random_code(rng: &mut impl Rng, len: usize) -> HashCode {
        HashCode::from_bits(&(0..len).map(|_| rng.random::<bool>()).collect::<Vec<_>>())
    }

    fn pad_bits_are_zero(c: &HashCode) -> bool {
        let tail = c.len() % 64;
        tail == 0 || c.words()[c.words().len() - 1] >> tail == 0
    }

    #[test]
    fn binarize_thresholds_at_one_half() {
        let c = binarize(&[0.7, 0.3]);
        assert!(c.bit(0));
        assert!(!c.bit(1));
        // the boundary maps to 1
        let c = binarize(&[0.5]);
        assert!(c.bit(0));
        // all slightly below 0.5: all-zero code with zero pad bits
        let c = binarize(&vec![0.5 - 1e-9; 70]);
        assert_eq!(c.count_ones(), 0);
        assert!(pad_bits_are_zero(&c));
    }

    #[test]
    fn binarize_keeps_pad_bits_zero_at_every_code_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &len in &[16usize, 24, 32, 64] {
            for _ in 0..50 {
                // sigmoid-range values, boundary included
                let v: Vec<f64> = (0..len)
                    .map(|i| {
                        if i % 7 == 0 {
                            0.5
                        } else {
                            rng.random_range(0.0..1.0)
                        }
                    })
                    .collect();
                let c = binarize(&v);
                assert_eq!(c.len(), len);
                assert!(pad_bits_are_zero(&c));
            }
        }
    }

    #[test]
    fn raw_binarize_mirrors_binarize() {
        let g = [0.7f32, 0.3, 0.5, -2.0];
        let raw = baseline_binarize_raw(&g);
        let via_f64 = binarize(&g.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        assert_eq!(raw, via_f64);
        assert_eq!(raw.len(), g.len());
    }

    #[test]
    fn hamming_hand_cases() {
        let a = HashCode::from_bits(&[true, false, true, true, false]);
        let b = HashCode::from_bits(&[true, false, false, true, true]);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&a, &b).unwrap(), 2);
        let short = HashCode::from_bits(&[true]);
        assert!(matches!(
            hamming_distance(&a, &short),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn hamming_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &len in &[16usize, 24, 32, 64, 2048] {
            for _ in 0..200 {
                let a = random_code(&mut rng, len);
                let b = random_code(&mut rng, len);
                assert_eq!(hamming_distance(&a, &b).unwrap(), naive_hamming(&a, &b));
            }
        }
    }

    #[test]
    fn from_words_rejects_pad_garbage() {
        assert!(HashCode::from_words(vec![u64::MAX], 64).is_ok());
        assert!(matches!(
            HashCode::from_words(vec![u64::MAX], 63),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            HashCode::from_words(vec![], 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn index_rejects_duplicates_and_mixed_lengths() {
        let c16 = HashCode::zeros(16);
        let c24 = HashCode::zeros(24);
        assert!(matches!(
            HammingIndex::build(vec![1, 1], &[c16.clone(), c16.clone()], None),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            HammingIndex::build(vec![1, 2], &[c16.clone(), c24], None),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            HammingIndex::build(vec![], &[], None),
            Err(Error::Validation(_))
        ));
        assert!(HammingIndex::build(vec![9], &[c16], None).is_ok());
    }

    /// Oracle: full sort by (distance, id).
    fn brute_force_ranking(codes: &[(u64, HashCode)], q: &HashCode) -> Vec<(u64, u32)> {
        let mut all: Vec<(u32, u64)> = codes
            .iter()
            .map(|(id, c)| (naive_hamming(c, q), *id))
            .collect();
        all.sort_unstable();
        all.into_iter().map(|(d, id)| (id, d)).collect()
    }

    #[test]
    fn search_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let len = *[16usize, 24, 33, 64, 100]
                .get(rng.random_range(0..5))
                .unwrap();
            let items: Vec<(u64, HashCode)> = (0..n)
                .map(|i| (i as u64 * 3 + 1, random_code(&mut rng, len)))
                .collect();
            let q = random_code(&mut rng, len);
            let index = HammingIndex::build(
                items.iter().map(|(id, _)| *id).collect(),
                &items.iter().map(|(_, c)| c.clone()).collect::<Vec<_>>(),
                None,
            )
            .unwrap();
            let oracle = brute_force_ranking(&items, &q);
            for k in [1, 3, n, n + 10] {
                let got = index.search_topk(&q, k).unwrap();
                assert_eq!(got, oracle[..k.min(n)]);
            }
        }
    }

    #[test]
    fn search_finds_the_query_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let codes: Vec<HashCode> = (0..10).map(|_| random_code(&mut rng, 32)).collect();
        let index = HammingIndex::build((0..10).collect(), &codes, None).unwrap();
        let hits = index.search_topk(&codes[4], 1).unwrap();
        assert_eq!(hits[0].1, 0);
    }

    #[test]
    fn search_ties_break_by_id_regardless_of_input_order() {
        let zero = HashCode::zeros(16);
        let fwd = HammingIndex::build(
            vec![3, 1, 2],
            &[zero.clone(), zero.clone(), zero.clone()],
            None,
        )
        .unwrap();
        let rev = HammingIndex::build(
            vec![2, 1, 3],
            &[zero.clone(), zero.clone(), zero.clone()],
            None,
        )
        .unwrap();
        let q = HashCode::zeros(16);
        assert_eq!(
            fwd.search_topk(&q, 3).unwrap(),
            vec![(1, 0), (2, 0), (3, 0)]
        );
        assert_eq!(
            fwd.search_topk(&q, 3).unwrap(),
            rev.search_topk(&q, 3).unwrap()
        );
    }

    #[test]
    fn search_rejects_mismatched_query() {
        let index = HammingIndex::build(vec![0], &[HashCode::zeros(16)], None).unwrap();
        assert!(matches!(
            index.search_topk(&HashCode::zeros(24), 1),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            index.search_topk(&HashCode::zeros(16), 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn lsh_is_deterministic_and_sign_driven() {
        let h = LshHasher::new(2, 1, 7).unwrap();
        let a = h.encode(&[1.0, 0.0]).unwrap();
        let b = h.encode(&[1.0, 0.0]).unwrap();
        assert_eq!(a, b);
        // the single projection hits opposite signs for x and -x
        // (unless the dot product is exactly zero, which Gaussian draws are not)
        let c = h.encode(&[-1.0, 0.0]).unwrap();
        assert_eq!(a.bit(0), !c.bit(0));
        assert!(matches!(h.encode(&[1.0]), Err(Error::Validation(_))));
    }

    #[test]
    fn lsh_single_known_projection() {
        // replace projections with a known vector to pin the sign rule
        let mut h = LshHasher::new(2, 1, 0).unwrap();
        h.projections = vec![1.0, 0.0];
        assert!(h.encode(&[1.0, 0.0]).unwrap().bit(0));
        assert!(!h.encode(&[-1.0, 0.0]).unwrap().bit(0));
        // w . x == 0 resolves to 1
        assert!(h.encode(&[0.0, 1.0]).unwrap().bit(0));
    }

    #[test]
    fn lsh_collision_rate_tracks_the_angle() {
        // sign-random-projection property: P(bit differs) = theta / pi
        let dim = 16;
        let n = 10_000;
        let h = LshHasher::new(dim, n, 42).unwrap();
        for theta in [std::f64::consts::PI / 4.0, std::f64::consts::PI / 2.0] {
            let mut x = vec![0.0f64; dim];
            let mut y = vec![0.0f64; dim];
            x[0] = 1.0;
            y[0] = theta.cos();
            y[1] = theta.sin();
            let cx = h.encode_f64(&x).unwrap();
            let cy = h.encode_f64(&y).unwrap();
            let frac = f64::from(hamming_distance(&cx, &cy).unwrap()) / n as f64;
            let expected = theta / std::f64::consts::PI;
            assert!(
                (frac - expected).abs() <= 0.05,
                "theta {theta}: {frac} vs {expected}"
            );
        }
    }

    #[test]
    fn euclidean_hand_case() {
        // 1-D archive {0, 1, 3}, query 0.9 -> value 1 first, then 0
        let feats = [0.0f32, 1.0, 3.0];
        let hits = euclidean_topk(&feats, 1, &[0.9], 2).unwrap();
        assert_eq!(hits[0].0, 1);
        assert_eq!(hits[1].0, 0);
        assert!((hits[0].1 - 0.1).abs() < 1e-6);
    }

    #[test]
    fn euclidean_self_match_is_first() {
        let feats = [0.3f32, 0.9, 0.1, 0.2, 0.5, 0.5];
        let hits = euclidean_topk(&feats, 2, &[0.1, 0.2], 3).unwrap();
        assert_eq!(hits[0], (1, 0.0));
    }

    #[test]
    fn euclidean_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let dim = rng.random_range(1..6);
            let n = rng.random_range(1..30);
            let feats: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut oracle: Vec<(u64, f64)> = feats
                .chunks_exact(dim)
                .enumerate()
                .map(|(i, row)| {
                    let d: f64 = row
                        .iter()
                        .zip(&q)
                        .map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2))
                        .sum();
                    (i as u64, d.sqrt())
                })
                .collect();
            oracle.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            let k = rng.random_range(1..n + 3);
            let got = euclidean_topk(&feats, dim, &q, k).unwrap();
            assert_eq!(got.len(), k.min(n));
            for (g, o) in got.iter().zip(&oracle) {
                assert_eq!(g.0, o.0);
                assert!((g.1 - o.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn euclidean_rejects_bad_shapes() {
        assert!(matches!(
            euclidean_topk(&[1.0, 2.0, 3.0], 2, &[0.0, 0.0], 1),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            euclidean_topk(&[1.0, 2.0], 2, &[0.0], 1),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn code_file_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let codes: Vec<HashCode> = (0..7).map(|_| random_code(&mut rng, 33)).collect();
        let ids: Vec<u64> = (0..7).map(|i| i * 10).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.hcod");
        save_codes(&path, &ids, &codes).unwrap();
        let (ids2, codes2) = load_codes(&path).unwrap();
        assert_eq!(ids, ids2);
        assert_eq!(codes, codes2);
    }

    #[test]
    fn code_file_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes.hcod");
        save_codes(&path, &[1], &[HashCode::from_bits(&[true, false, true])]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[2] = b'Z';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_codes(&path), Err(Error::Format(_))));
        // nonzero pad bits
        save_codes(&path, &[1], &[HashCode::from_bits(&[true, false, true])]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] = 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_codes(&path), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn packed_equals_naive_hamming(
            bits_a in proptest::collection::vec(any::<bool>(), 1..200),
            flips in proptest::collection::vec(any::<bool>(), 1..200),
        ) {
            let len = bits_a.len().min(flips.len());
            let a = HashCode::from_bits(&bits_a[..len]);
            let b_bits: Vec<bool> =
                bits_a[..len].iter().zip(&flips[..len]).map(|(x, f)| x ^ f).collect();
            let b = HashCode::from_bits(&b_bits);
            prop_assert_eq!(hamming_distance(&a, &b).unwrap(), naive_hamming(&a, &b));
        }

        #[test]
        fn hamming_triangle_inequality(
            seed in any::<u64>(),
            len in 1usize..150,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_code(&mut rng, len);
            let b = random_code(&mut rng, len);
            let c = random_code(&mut rng, len);
            let ab = hamming_distance(&a, &b).unwrap();
            let bc = hamming_distance(&b, &c).unwrap();
            let ac = hamming_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc);
        }

        #[test]
        fn topk_is_a_prefix_of_the_full_ordering(seed in any::<u64>(), k in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..25);
            let codes: Vec<HashCode> = (0..n).map(|_| random_code(&mut rng, 24)).collect();
            let index = HammingIndex::build((0..n as u64).collect(), &codes, None).unwrap();
            let q = random_code(&mut rng, 24);
            let top = index.search_topk(&q, k).unwrap();
            let full = index.search_topk(&q, n).unwrap();
            prop_assert_eq!(&top[..], &full[..k.min(n)]);
        }
    }
}
