//! The training objective: a hinge triplet term over squared Euclidean
//! distances, a push term driving sigmoid activations toward {0, 1}, and a
//! balance term driving each embedding's mean activation toward 0.5 — plus
//! the exact gradients of each with respect to the embeddings.
//!
//! All reductions are sums over the batch, never means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative weights of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Hinge margin between positive and negative squared distances.
    pub margin: f64,
    /// Weight of the saturation ("push") term.
    pub push_weight: f64,
    /// Weight of the bit-balance term.
    pub balance_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            margin: 0.2,
            push_weight: 0.001,
            balance_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !self.margin.is_finite() || self.margin <= 0.0 {
            return Err(Error::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.push_weight < 0.0 || self.balance_weight < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// A mini-batch of triplets over a shared list of embeddings.
///
/// `triplets[i] = [anchor, positive, negative]` index into `embeddings`.
/// Keeping the embeddings deduplicated lets a sample that appears in several
/// slots be forwarded once, with gradients accumulated per unique embedding.
#[derive(Debug, Clone)]
pub struct TripletBatch {
    embeddings: Vec<Vec<f64>>,
    triplets: Vec<[usize; 3]>,
}

impl TripletBatch {
    pub fn new(embeddings: Vec<Vec<f64>>, triplets: Vec<[usize; 3]>) -> Result<Self> {
        if triplets.is_empty() {
            return Err(Error::Validation("batch needs at least one triplet".into()));
        }
        let k = embeddings.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(Error::Validation("embeddings must be non-empty".into()));
        }
        if let Some(bad) = embeddings.iter().find(|e| e.len() != k) {
            return Err(Error::Validation(format!(
                "embedding length {} does not match batch code length {k}",
                bad.len()
            )));
        }
        if triplets.iter().flatten().any(|&i| i >= embeddings.len()) {
            return Err(Error::Validation("triplet index out of range".into()));
        }
        Ok(Self {
            embeddings,
            triplets,
        })
    }

    /// Builds a batch from explicit (anchor, positive, negative) embedding
    /// triples, one slot per embedding.
    pub fn from_triples(triples: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let mut embeddings = Vec::with_capacity(triples.len() * 3);
        let mut triplets = Vec::with_capacity(triples.len());
        for (a, p, n) in triples {
            let base = embeddings.len();
            embeddings.push(a);
            embeddings.push(p);
            embeddings.push(n);
            triplets.push([base, base + 1, base + 2]);
        }
        Self::new(embeddings, triplets)
    }

    pub fn embeddings(&self) -> &[Vec<f64>] {
        &self.embeddings
    }

    pub fn triplets(&self) -> &[[usize; 3]] {
        &self.triplets
    }

    /// Embedding width K.
    pub fn code_len(&self) -> usize {
        self.embeddings[0].len()
    }

    /// Number of triplets M.
    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Hinge triplet loss, summed over the batch:
/// `sum_i max(0, ||a_i - p_i||^2 - ||a_i - n_i||^2 + margin)`.
///
/// Inactive hinges contribute exactly zero loss and zero gradient. Gradients
/// are returned per unique embedding, accumulated over all slots it fills.
pub fn triplet_loss(batch: &TripletBatch, margin: f64) -> (f64, Vec<Vec<f64>>) {
    let k = batch.code_len();
    let mut grads = vec![vec![0.0f64; k]; batch.embeddings.len()];
    let mut loss = 0.0;
    for &[a, p, n] in &batch.triplets {
        let (va, vp, vn) = (
            &batch.embeddings[a],
            &batch.embeddings[p],
            &batch.embeddings[n],
        );
        let term = sq_dist(va, vp) - sq_dist(va, vn) + margin;
        if term > 0.0 {
            loss += term;
            for j in 0..k {
                grads[a][j] += 2.0 * (vn[j] - vp[j]);
                grads[p][j] += 2.0 * (vp[j] - va[j]);
                grads[n][j] += 2.0 * (va[j] - vn[j]);
            }
        }
    }
    (loss, grads)
}

/// Per-embedding push term `-(1/K) * ||v - 0.5|| ^2` and its gradient
/// contribution `-(2/K) (v - 0.5)`.
fn push_term(v: &[f64]) -> f64 {
    let k = v.len() as f64;
    -v.iter().map(|x| (x - 0.5) * (x - 0.5)).sum::<f64>() / k
}

fn add_push_grad(v: &[f64], weight: f64, grad: &mut [f64]) {
    let k = v.len() as f64;
    for (g, x) in grad.iter_mut().zip(v) {
        *g += weight * (-2.0 / k) * (x - 0.5);
    }
}

/// Per-embedding balance term `(mean(v) - 0.5)^2` and its gradient
/// contribution `(2/K) (mean(v) - 0.5)` on every component.
fn balance_term(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (mean - 0.5) * (mean - 0.5)
}

fn add_balance_grad(v: &[f64], weight: f64, grad: &mut [f64]) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let g = weight * (2.0 / k) * (mean - 0.5);
    for gj in grad.iter_mut() {
        *gj += g;
    }
}

/// Saturation loss over a list of embeddings (sum of per-embedding terms,
/// each in `[-0.25, 0]`) with per-embedding gradients.
pub fn push_loss(embeddings: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let mut grads: Vec<Vec<f64>> = embeddings.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut loss = 0.0;
    for (v, g) in embeddings.iter().zip(&mut grads) {
        loss += push_term(v);
        add_push_grad(v, 1.0, g);
    }
    (loss, grads)
}

/// Bit-balance loss over a list of embeddings (sum of per-embedding terms,
/// each in `[0, 0.25]`) with per-embedding gradients.
pub fn balancing_loss(embeddings: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let mut grads: Vec<Vec<f64>> = embeddings.iter().map(|v| vec![0.0; v.len()]).collect();
    let mut loss = 0.0;
    for (v, g) in embeddings.iter().zip(&mut grads) {
        loss += balance_term(v);
        add_balance_grad(v, 1.0, g);
    }
    (loss, grads)
}

/// Which embeddings the push and balance terms range over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PushBalanceScope {
    /// Every triplet slot of the batch (3M terms, samples counted with
    /// multiplicity).
    #[default]
    AllSlots,
    /// Each distinct embedding of the batch exactly once.
    UniqueImages,
}

/// The combined objective value, term by term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub metric: f64,
    pub push: f64,
    pub balancing: f64,
}

/// Weighted combination `metric + push_weight * push + balance_weight *
/// balancing`, with gradients per unique embedding.
pub fn combined_loss(
    batch: &TripletBatch,
    weights: &LossWeights,
    scope: PushBalanceScope,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    weights.validate()?;
    let (metric, mut grads) = triplet_loss(batch, weights.margin);
    let mut push = 0.0;
    let mut balancing = 0.0;
    let mut accumulate = |idx: usize, grads: &mut Vec<Vec<f64>>| {
        let v = &batch.embeddings[idx];
        push += push_term(v);
        balancing += balance_term(v);
        add_push_grad(v, weights.push_weight, &mut grads[idx]);
        add_balance_grad(v, weights.balance_weight, &mut grads[idx]);
    };
    match scope {
        PushBalanceScope::AllSlots => {
            for &[a, p, n] in &batch.triplets {
                for idx in [a, p, n] {
                    accumulate(idx, &mut grads);
                }
            }
        }
        PushBalanceScope::UniqueImages => {
            for idx in 0..batch.embeddings.len() {
                accumulate(idx, &mut grads);
            }
        }
    }
    let total = metric + weights.push_weight * push + weights.balance_weight * balancing;
    Ok((
        LossBreakdown {
            total,
            metric,
            push,
            balancing,
        },
        grads,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch_of_one(a: Vec<f64>, p: Vec<f64>, n: Vec<f64>) -> TripletBatch {
        TripletBatch::from_triples(vec![(a, p, n)]).unwrap()
    }

    #[test]
    fn degenerate_triplet_costs_the_margin() {
        let v = vec![0.3, 0.7];
        let b = batch_of_one(v.clone(), v.clone(), v);
        let (loss, _) = triplet_loss(&b, 0.2);
        assert!((loss - 0.2).abs() < 1e-15);
    }

    #[test]
    fn inactive_hinge_has_zero_loss_and_grad() {
        // ||a-p||^2 = 0.36, ||a-n||^2 = 1.0: 0.36 - 1.0 + 0.2 < 0
        let b = batch_of_one(vec![0.0, 0.0], vec![0.6, 0.0], vec![0.0, 1.0]);
        let (loss, grads) = triplet_loss(&b, 0.2);
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn active_hinge_hand_value() {
        // 0.36 - 0.25 + 0.2 = 0.31
        let b = batch_of_one(vec![0.0, 0.0], vec![0.6, 0.0], vec![0.5, 0.0]);
        let (loss, _) = triplet_loss(&b, 0.2);
        assert!((loss - 0.31).abs() < 1e-15);
    }

    #[test]
    fn triplet_batch_rejects_mixed_lengths() {
        assert!(matches!(
            TripletBatch::from_triples(vec![(vec![0.1], vec![0.2, 0.3], vec![0.4])]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn push_loss_examples() {
        let (l, _) = push_loss(&[vec![0.5, 0.5]]);
        assert_eq!(l, 0.0);
        let (l, _) = push_loss(&[vec![1.0, 0.0]]);
        assert!((l - (-0.25)).abs() < 1e-15);
        let (l, g) = push_loss(&[vec![0.9, 0.1]]);
        assert!((l - (-0.16)).abs() < 1e-12);
        assert!((g[0][0] - (-0.4)).abs() < 1e-12);
        assert!((g[0][1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn balancing_loss_examples() {
        let (l, _) = balancing_loss(&[vec![1.0, 0.0]]);
        assert_eq!(l, 0.0);
        let (l, _) = balancing_loss(&[vec![1.0, 1.0]]);
        assert!((l - 0.25).abs() < 1e-15);
        let (l, _) = balancing_loss(&[vec![0.6, 0.8]]);
        assert!((l - 0.04).abs() < 1e-12);
    }

    #[test]
    fn combined_with_zero_weights_is_the_triplet_loss() {
        let b = batch_of_one(vec![0.2, 0.9], vec![0.4, 0.1], vec![0.3, 0.8]);
        let w = LossWeights {
            margin: 0.2,
            push_weight: 0.0,
            balance_weight: 0.0,
        };
        let (parts, grads) = combined_loss(&b, &w, PushBalanceScope::AllSlots).unwrap();
        let (metric, mgrads) = triplet_loss(&b, 0.2);
        assert_eq!(parts.total, metric);
        assert_eq!(parts.metric, metric);
        assert_eq!(grads, mgrads);
    }

    #[test]
    fn every_term_vanishes_at_its_zero() {
        // Embeddings at the repeller point 0.5*1 contribute zero push and
        // zero balance; an inactive hinge contributes zero metric. (All three
        // zeros cannot coincide in one triplet: three equal embeddings make
        // the hinge term equal the margin.)
        let half = vec![0.5; 4];
        assert_eq!(push_term(&half), 0.0);
        assert_eq!(balance_term(&half), 0.0);
        // a = p = 0.5*1, n one corner away: ||a-n||^2 = 0.25 >= margin 0.2,
        // so the hinge is inactive and only n's push/balance terms remain.
        let n = vec![1.0, 0.5, 0.5, 0.5];
        let b = TripletBatch::from_triples(vec![(half.clone(), half, n.clone())]).unwrap();
        let w = LossWeights {
            margin: 0.2,
            push_weight: 0.4,
            balance_weight: 0.9,
        };
        let (parts, _) = combined_loss(&b, &w, PushBalanceScope::AllSlots).unwrap();
        assert_eq!(parts.metric, 0.0);
        let expected = 0.4 * push_term(&n) + 0.9 * balance_term(&n);
        assert!((parts.total - expected).abs() < 1e-15);
    }

    #[test]
    fn combined_rejects_bad_weights() {
        let b = batch_of_one(vec![0.5], vec![0.5], vec![0.5]);
        let w = LossWeights {
            margin: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            combined_loss(&b, &w, PushBalanceScope::AllSlots),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn all_slots_counts_shared_embeddings_with_multiplicity() {
        // one embedding reused in two triplets: push/balance counted per slot
        let e = vec![
            vec![0.9, 0.1],
            vec![0.2, 0.2],
            vec![0.7, 0.6],
            vec![0.3, 0.9],
        ];
        let b = TripletBatch::new(e.clone(), vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let w = LossWeights {
            margin: 0.2,
            push_weight: 1.0,
            balance_weight: 1.0,
        };
        let (all, _) = combined_loss(&b, &w, PushBalanceScope::AllSlots).unwrap();
        let (unique, _) = combined_loss(&b, &w, PushBalanceScope::UniqueImages).unwrap();
        let extra = push_term(&e[0]) + balance_term(&e[0]) + push_term(&e[2]) + balance_term(&e[2]);
        assert!((all.total - unique.total - extra).abs() < 1e-12);
    }

    fn random_batch(rng: &mut impl Rng, m: usize, k: usize) -> TripletBatch {
        let triples = (0..m)
            .map(|_| {
                let mut v = || {
                    (0..k)
                        .map(|_| rng.random_range(0.0..1.0))
                        .collect::<Vec<f64>>()
                };
                (v(), v(), v())
            })
            .collect();
        TripletBatch::from_triples(triples).unwrap()
    }

    /// Central finite differences of the combined loss with respect to the
    /// embeddings, checked against the analytic gradients.
    #[test]
    #[allow(clippy::needless_range_loop)]
    fn combined_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w = LossWeights {
            margin: 0.2,
            push_weight: 0.3,
            balance_weight: 0.7,
        };
        for scope in [PushBalanceScope::AllSlots, PushBalanceScope::UniqueImages] {
            for _ in 0..60 {
                let b = random_batch(&mut rng, 3, 4);
                let (_, grads) = combined_loss(&b, &w, scope).unwrap();
                let h = 1e-6;
                for e in 0..b.embeddings().len() {
                    for j in 0..b.code_len() {
                        let mut up = b.clone();
                        up.embeddings[e][j] += h;
                        let mut dn = b.clone();
                        dn.embeddings[e][j] -= h;
                        let lu = combined_loss(&up, &w, scope).unwrap().0.total;
                        let ld = combined_loss(&dn, &w, scope).unwrap().0.total;
                        let fd = (lu - ld) / (2.0 * h);
                        let a = grads[e][j];
                        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                        assert!(rel < 1e-4, "emb {e} comp {j}: analytic {a}, fd {fd}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn loss_bounds_hold(values in proptest::collection::vec(0.0f64..=1.0, 8..=24)) {
            let embs: Vec<Vec<f64>> = values.chunks(4).map(|c| c.to_vec()).collect();
            let n = embs.len() as f64;
            let (push, _) = push_loss(&embs);
            prop_assert!(push <= 0.0 && push >= -0.25 * n);
            let (bal, _) = balancing_loss(&embs);
            prop_assert!((0.0..=0.25 * n).contains(&bal));
        }

        #[test]
        fn metric_loss_is_non_negative_and_permutation_invariant(
            a in proptest::collection::vec(0.0f64..=1.0, 5),
            p in proptest::collection::vec(0.0f64..=1.0, 5),
            n in proptest::collection::vec(0.0f64..=1.0, 5),
        ) {
            let b = TripletBatch::from_triples(vec![(a.clone(), p.clone(), n.clone())]).unwrap();
            let (loss, _) = triplet_loss(&b, 0.2);
            prop_assert!(loss >= 0.0);
            // rotate all coordinates by one position
            let rot = |v: &[f64]| {
                let mut r = v.to_vec();
                r.rotate_left(1);
                r
            };
            let br = TripletBatch::from_triples(vec![(rot(&a), rot(&p), rot(&n))]).unwrap();
            let (loss_r, _) = triplet_loss(&br, 0.2);
            prop_assert!((loss - loss_r).abs() < 1e-12);
        }

        #[test]
        fn inactive_hinge_never_contributes(
            a in proptest::collection::vec(0.0f64..=1.0, 4),
            p in proptest::collection::vec(0.0f64..=1.0, 4),
            n in proptest::collection::vec(0.0f64..=1.0, 4),
        ) {
            let d_ap: f64 = a.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum();
            let d_an: f64 = a.iter().zip(&n).map(|(x, y)| (x - y) * (x - y)).sum();
            let b = TripletBatch::from_triples(vec![(a, p, n)]).unwrap();
            let (loss, grads) = triplet_loss(&b, 0.2);
            if d_ap + 0.2 <= d_an {
                prop_assert_eq!(loss, 0.0);
                prop_assert!(grads.iter().flatten().all(|&g| g == 0.0));
            } else {
                prop_assert!(loss > 0.0);
            }
        }
    }
}
