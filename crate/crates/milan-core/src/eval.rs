//! Retrieval evaluation: average precision at k, whole-protocol evaluation of
//! each retrieval method (queries = test split, archive = train split),
//! parameter sweeps, and search-latency measurement.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_split, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::hashing::{
    baseline_binarize_raw, binarize, euclidean_topk, HammingIndex, HashCode, LshHasher,
};
use crate::net::{embed, NetworkParams};
use crate::trainer::{train, TrainConfig};

/// How the precision sum of AP@k is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ApNormalization {
    /// Divide by `min(R, k)`: a perfect top-k scores 1 even when more than k
    /// relevant items exist.
    #[default]
    MinRelevantK,
    /// Divide by `k` regardless of how many relevant items exist.
    ByK,
}

/// AP@k with the `min(R, k)` normalization; `relevant_total` is the number of
/// relevant items in the whole archive. Returns 0 when nothing is relevant.
pub fn average_precision_at_k(
    ranked_labels: &[u32],
    query_label: u32,
    k: usize,
    relevant_total: usize,
) -> f64 {
    average_precision_with(
        ranked_labels,
        query_label,
        k,
        relevant_total,
        ApNormalization::MinRelevantK,
    )
}

/// AP@k under an explicit normalization convention. `k` is clamped to the
/// ranking length, so oversized cutoffs score the full archive.
pub fn average_precision_with(
    ranked_labels: &[u32],
    query_label: u32,
    k: usize,
    relevant_total: usize,
    norm: ApNormalization,
) -> f64 {
    let k_eff = k.min(ranked_labels.len());
    if relevant_total == 0 || k_eff == 0 {
        return 0.0;
    }
    let mut hits = 0u32;
    let mut precision_sum = 0.0;
    for (i, &label) in ranked_labels.iter().take(k_eff).enumerate() {
        if label == query_label {
            hits += 1;
            precision_sum += f64::from(hits) / (i + 1) as f64;
        }
    }
    let denom = match norm {
        ApNormalization::MinRelevantK => relevant_total.min(k_eff),
        ApNormalization::ByK => k_eff,
    };
    precision_sum / denom as f64
}

/// The retrieval methods the harness can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Trained hashing network, binary codes, Hamming ranking.
    Milan,
    /// Sign-random-projection codes over raw features, Hamming ranking.
    Lsh,
    /// Exact Euclidean ranking over raw features.
    RawEuclidean,
    /// Raw features thresholded at 0.5 (K = D), Hamming ranking.
    RawHamming,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Milan,
        Method::Lsh,
        Method::RawEuclidean,
        Method::RawHamming,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Milan => "milan",
            Method::Lsh => "lsh",
            Method::RawEuclidean => "raw-euclidean",
            Method::RawHamming => "raw-hamming",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!(
                    "unknown method '{s}'; valid methods: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// A method together with whatever trained or constructed state it needs.
pub enum MethodArtifacts<'a> {
    Milan(&'a NetworkParams),
    Lsh(&'a LshHasher),
    RawEuclidean,
    RawHamming,
}

impl MethodArtifacts<'_> {
    pub fn method(&self) -> Method {
        match self {
            MethodArtifacts::Milan(_) => Method::Milan,
            MethodArtifacts::Lsh(_) => Method::Lsh,
            MethodArtifacts::RawEuclidean => Method::RawEuclidean,
            MethodArtifacts::RawHamming => Method::RawHamming,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub top_k: usize,
    pub ap_norm: ApNormalization,
    /// Scale features to unit L2 norm before the network (milan only).
    pub unit_norm: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            top_k: 20,
            ap_norm: ApNormalization::default(),
            unit_norm: false,
        }
    }
}

/// The outcome of one evaluation run. Timing covers the ranking step only;
/// encoding queries and archive into codes is excluded.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub k: usize,
    pub hash_bits: Option<usize>,
    pub archive_size: usize,
    pub query_count: usize,
    pub map: f64,
    pub mean_query_us: f64,
    pub total_wall_ms: f64,
    pub per_query_ap: Vec<f64>,
}

fn relevant_counts(archive: &LabeledDataset) -> Vec<usize> {
    let mut counts = vec![0usize; archive.class_count()];
    for &l in archive.labels() {
        counts[l as usize] += 1;
    }
    counts
}

/// Encodes every row of a dataset into a hash code under the given method.
pub fn encode_dataset(
    artifacts: &MethodArtifacts,
    ds: &LabeledDataset,
    unit_norm: bool,
) -> Result<Vec<HashCode>> {
    match artifacts {
        MethodArtifacts::Milan(params) => {
            if params.input_dim() != ds.dim() {
                return Err(Error::Validation(format!(
                    "model expects {}-dim features, dataset has {}",
                    params.input_dim(),
                    ds.dim()
                )));
            }
            (0..ds.len())
                .map(|i| Ok(binarize(&embed(params, ds.feature(i), unit_norm)?)))
                .collect()
        }
        MethodArtifacts::Lsh(hasher) => (0..ds.len())
            .map(|i| hasher.encode(ds.feature(i)))
            .collect(),
        MethodArtifacts::RawHamming => Ok((0..ds.len())
            .map(|i| baseline_binarize_raw(ds.feature(i)))
            .collect()),
        MethodArtifacts::RawEuclidean => Err(Error::Config(
            "the Euclidean baseline has no hash codes".into(),
        )),
    }
}

/// Runs the full retrieval protocol: encode the archive once, rank it for
/// every query, aggregate mAP@k and per-query latency.
///
/// Queries fan out across threads; APs are averaged in query order, so the
/// result is identical regardless of thread count.
pub fn evaluate(
    artifacts: &MethodArtifacts,
    queries: &LabeledDataset,
    archive: &LabeledDataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if queries.dim() != archive.dim() {
        return Err(Error::Validation(format!(
            "query dim {} does not match archive dim {}",
            queries.dim(),
            archive.dim()
        )));
    }
    if opts.top_k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    let wall = Instant::now();
    let relevant = relevant_counts(archive);
    let k = opts.top_k;

    let (outcomes, hash_bits) = match artifacts {
        MethodArtifacts::RawEuclidean => {
            let per_query: Result<Vec<(f64, f64)>> = (0..queries.len())
                .into_par_iter()
                .map(|q| {
                    let started = Instant::now();
                    let hits =
                        euclidean_topk(archive.features(), archive.dim(), queries.feature(q), k)?;
                    let micros = started.elapsed().as_secs_f64() * 1e6;
                    let ranked: Vec<u32> = hits
                        .iter()
                        .map(|(id, _)| archive.label(*id as usize))
                        .collect();
                    let label = queries.label(q);
                    let ap = average_precision_with(
                        &ranked,
                        label,
                        k,
                        relevant[label as usize],
                        opts.ap_norm,
                    );
                    Ok((ap, micros))
                })
                .collect();
            (per_query?, None)
        }
        _ => {
            let archive_codes = encode_dataset(artifacts, archive, opts.unit_norm)?;
            let query_codes = encode_dataset(artifacts, queries, opts.unit_norm)?;
            let bits = archive_codes[0].len();
            let index =
                HammingIndex::build((0..archive.len() as u64).collect(), &archive_codes, None)?;
            let per_query: Result<Vec<(f64, f64)>> = query_codes
                .par_iter()
                .enumerate()
                .map(|(q, code)| {
                    let started = Instant::now();
                    let hits = index.search_topk(code, k)?;
                    let micros = started.elapsed().as_secs_f64() * 1e6;
                    let ranked: Vec<u32> = hits
                        .iter()
                        .map(|(id, _)| archive.label(*id as usize))
                        .collect();
                    let label = queries.label(q);
                    let ap = average_precision_with(
                        &ranked,
                        label,
                        k,
                        relevant[label as usize],
                        opts.ap_norm,
                    );
                    Ok((ap, micros))
                })
                .collect();
            (per_query?, Some(bits))
        }
    };

    let per_query_ap: Vec<f64> = outcomes.iter().map(|(ap, _)| *ap).collect();
    let map = per_query_ap.iter().sum::<f64>() / per_query_ap.len().max(1) as f64;
    let mean_query_us =
        outcomes.iter().map(|(_, us)| *us).sum::<f64>() / outcomes.len().max(1) as f64;
    Ok(EvalReport {
        method: artifacts.method().to_string(),
        k,
        hash_bits,
        archive_size: archive.len(),
        query_count: queries.len(),
        map,
        mean_query_us,
        total_wall_ms: wall.elapsed().as_secs_f64() * 1e3,
        per_query_ap,
    })
}

/// Sweepable experiment axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    HashBits,
    TrainFraction,
    TopK,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::HashBits => "hash_bits",
            SweepAxis::TrainFraction => "train_fraction",
            SweepAxis::TopK => "top_k",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hash_bits" => Ok(SweepAxis::HashBits),
            "train_fraction" => Ok(SweepAxis::TrainFraction),
            "top_k" => Ok(SweepAxis::TopK),
            other => Err(Error::Config(format!(
                "unknown sweep axis '{other}'; valid axes: hash_bits, train_fraction, top_k"
            ))),
        }
    }
}

/// One axis and the values to sweep it over.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// Everything a sweep holds fixed: the dataset, the split policy, the base
/// training configuration, the method under test, and evaluation options.
pub struct SweepContext<'a> {
    pub dataset: &'a LabeledDataset,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub method: Method,
    pub eval: EvalOptions,
    /// Seed for projection draws when the method is LSH.
    pub lsh_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub map: f64,
    pub mean_latency_us: f64,
}

fn integer_value(axis: SweepAxis, v: f64) -> Result<usize> {
    if v < 1.0 || v.fract() != 0.0 {
        return Err(Error::Config(format!(
            "axis {} needs positive integer values, got {v}",
            axis.name()
        )));
    }
    Ok(v as usize)
}

fn build_and_eval(
    method: Method,
    train_cfg: &TrainConfig,
    lsh_seed: u64,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    queries: &LabeledDataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    match method {
        Method::Milan => {
            let (params, _) = train(train_ds, val_ds, train_cfg)?;
            evaluate(&MethodArtifacts::Milan(&params), queries, train_ds, opts)
        }
        Method::Lsh => {
            let hasher = LshHasher::new(train_ds.dim(), train_cfg.hash_bits, lsh_seed)?;
            evaluate(&MethodArtifacts::Lsh(&hasher), queries, train_ds, opts)
        }
        Method::RawEuclidean => evaluate(&MethodArtifacts::RawEuclidean, queries, train_ds, opts),
        Method::RawHamming => evaluate(&MethodArtifacts::RawHamming, queries, train_ds, opts),
    }
}

/// Runs one train + evaluate cycle per axis value (the `top_k` axis trains
/// once and re-ranks), returning rows in ascending axis order.
pub fn run_sweep(spec: &SweepSpec, ctx: &SweepContext) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let mut values = spec.values.clone();
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite sweep values"));
    let attach = |e: Error, v: f64| -> Error { Error::Config(format!("sweep value {v}: {e}")) };
    let mut rows = Vec::with_capacity(values.len());
    match spec.axis {
        SweepAxis::HashBits => {
            if matches!(ctx.method, Method::RawEuclidean | Method::RawHamming) {
                return Err(Error::Config(
                    "the hash_bits axis applies to milan or lsh only".into(),
                ));
            }
            let (train_ds, val_ds, test_ds) = stratified_split(ctx.dataset, &ctx.split)?;
            for &v in &values {
                let bits = integer_value(spec.axis, v)?;
                let mut cfg = ctx.train.clone();
                cfg.hash_bits = bits;
                let report = build_and_eval(
                    ctx.method,
                    &cfg,
                    ctx.lsh_seed,
                    &train_ds,
                    &val_ds,
                    &test_ds,
                    &ctx.eval,
                )
                .map_err(|e| attach(e, v))?;
                rows.push(SweepRow {
                    axis: spec.axis.name().into(),
                    value: v,
                    map: report.map,
                    mean_latency_us: report.mean_query_us,
                });
            }
        }
        SweepAxis::TrainFraction => {
            for &v in &values {
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::Config(format!(
                        "train_fraction values must lie in (0, 1), got {v}"
                    )));
                }
                let split = SplitSpec {
                    train_fraction: v,
                    ..ctx.split
                };
                let (train_ds, val_ds, test_ds) =
                    stratified_split(ctx.dataset, &split).map_err(|e| attach(e, v))?;
                let report = build_and_eval(
                    ctx.method,
                    &ctx.train,
                    ctx.lsh_seed,
                    &train_ds,
                    &val_ds,
                    &test_ds,
                    &ctx.eval,
                )
                .map_err(|e| attach(e, v))?;
                rows.push(SweepRow {
                    axis: spec.axis.name().into(),
                    value: v,
                    map: report.map,
                    mean_latency_us: report.mean_query_us,
                });
            }
        }
        SweepAxis::TopK => {
            let (train_ds, val_ds, test_ds) = stratified_split(ctx.dataset, &ctx.split)?;
            // one model serves every cutoff
            let params = match ctx.method {
                Method::Milan => Some(train(&train_ds, &val_ds, &ctx.train)?.0),
                _ => None,
            };
            let hasher = match ctx.method {
                Method::Lsh => Some(LshHasher::new(
                    train_ds.dim(),
                    ctx.train.hash_bits,
                    ctx.lsh_seed,
                )?),
                _ => None,
            };
            for &v in &values {
                let k = integer_value(spec.axis, v)?;
                let opts = EvalOptions {
                    top_k: k,
                    ..ctx.eval
                };
                let artifacts = match ctx.method {
                    Method::Milan => MethodArtifacts::Milan(params.as_ref().expect("trained")),
                    Method::Lsh => MethodArtifacts::Lsh(hasher.as_ref().expect("built")),
                    Method::RawEuclidean => MethodArtifacts::RawEuclidean,
                    Method::RawHamming => MethodArtifacts::RawHamming,
                };
                let report =
                    evaluate(&artifacts, &test_ds, &train_ds, &opts).map_err(|e| attach(e, v))?;
                rows.push(SweepRow {
                    axis: spec.axis.name().into(),
                    value: v,
                    map: report.map,
                    mean_latency_us: report.mean_query_us,
                });
            }
        }
    }
    Ok(rows)
}

/// Renders sweep rows as CSV with the fixed header.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,map,mean_latency_us\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.axis, r.value, r.map, r.mean_latency_us
        ));
    }
    out
}

/// What kind of archive a latency benchmark searches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchKind {
    /// Bit-packed codes of the given length, Hamming ranking.
    Hamming { bits: usize },
    /// Dense vectors of the given dimension, exact Euclidean ranking.
    Euclidean { dim: usize },
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LatencyStats {
    pub mean_us: f64,
    pub p50_us: f64,
    pub p95_us: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

fn summarize(mut times: Vec<f64>) -> LatencyStats {
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    LatencyStats {
        mean_us: mean,
        p50_us: percentile(&times, 0.50),
        p95_us: percentile(&times, 0.95),
    }
}

/// Wall-clock timing of just the top-k search over a synthetic archive of
/// `n` items: `repetitions` timed queries after one discarded warmup.
/// Runs strictly single-threaded so per-query numbers are stable.
pub fn bench_latency(
    kind: SearchKind,
    n: usize,
    top_k: usize,
    repetitions: usize,
    seed: u64,
) -> Result<LatencyStats> {
    if n == 0 {
        return Err(Error::Config("archive size must be at least 1".into()));
    }
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    if repetitions < 10 {
        return Err(Error::Config("need at least 10 repetitions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        SearchKind::Hamming { bits } => {
            if bits == 0 {
                return Err(Error::Config("code length must be positive".into()));
            }
            let random_code = |rng: &mut ChaCha8Rng| {
                let mut words = vec![0u64; crate::hashing::words_for(bits)];
                for w in &mut words {
                    *w = rng.random();
                }
                let tail = bits % 64;
                if tail != 0 {
                    let last = words.len() - 1;
                    words[last] &= (1u64 << tail) - 1;
                }
                HashCode::from_words(words, bits).expect("pad bits masked")
            };
            let codes: Vec<HashCode> = (0..n).map(|_| random_code(&mut rng)).collect();
            let index = HammingIndex::build((0..n as u64).collect(), &codes, None)?;
            let queries: Vec<HashCode> = (0..=repetitions).map(|_| random_code(&mut rng)).collect();
            std::hint::black_box(index.search_topk(&queries[0], top_k)?);
            let mut times = Vec::with_capacity(repetitions);
            for q in &queries[1..] {
                let started = Instant::now();
                std::hint::black_box(index.search_topk(q, top_k)?);
                times.push(started.elapsed().as_secs_f64() * 1e6);
            }
            Ok(summarize(times))
        }
        SearchKind::Euclidean { dim } => {
            if dim == 0 {
                return Err(Error::Config("dimension must be positive".into()));
            }
            let features: Vec<f32> = (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect();
            let queries: Vec<f32> = (0..(repetitions + 1) * dim)
                .map(|_| rng.random_range(0.0..1.0))
                .collect();
            std::hint::black_box(euclidean_topk(&features, dim, &queries[..dim], top_k)?);
            let mut times = Vec::with_capacity(repetitions);
            for q in queries.chunks_exact(dim).skip(1) {
                let started = Instant::now();
                std::hint::black_box(euclidean_topk(&features, dim, q, top_k)?);
                times.push(started.elapsed().as_secs_f64() * 1e6);
            }
            Ok(summarize(times))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synthetic;
    use crate::miner::MinerConfig;
    use crate::net::{init_params, AdamConfig};

    #[test]
    fn ap_perfect_ranking_scores_one() {
        assert_eq!(average_precision_at_k(&[1, 1, 1], 1, 3, 5), 1.0);
    }

    #[test]
    fn top_k_sweep_on_separable_data_decays_slowly() {
        let ds = gen_synthetic(4, 30, 8, 0.5, 15.0, 21).unwrap();
        let split = SplitSpec {
            train_fraction: 0.6,
            val_per_class: 2,
            seed: 2,
        };
        let train_cfg = TrainConfig {
            hash_bits: 16,
            hidden_dims: vec![16, 8],
            epochs: 1,
            iters_per_epoch: 300,
            eval_every: 100,
            val_top_k: 10,
            miner: MinerConfig {
                batch_size: 8,
                ..Default::default()
            },
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..Default::default()
            },
            ..Default::default()
        }
        .with_master_seed(2);
        let ctx = SweepContext {
            dataset: &ds,
            split,
            train: train_cfg,
            method: Method::Milan,
            eval: EvalOptions::default(),
            lsh_seed: 0,
        };
        let spec = SweepSpec {
            axis: SweepAxis::TopK,
            values: vec![10.0, 20.0, 50.0],
        };
        let rows = run_sweep(&spec, &ctx).unwrap();
        assert_eq!(rows.len(), 3);
        let maps: Vec<f64> = rows.iter().map(|r| r.map).collect();
        assert!(maps.iter().all(|m| *m > 0.9), "sweep maps {maps:?}");
        assert!(
            maps[0] - maps[2] < 0.05,
            "mAP decays too fast over k: {maps:?}"
        );
    }

    #[test]
    fn ap_hand_case() {
        // archive [A, A, B], ranking (A, B, A), k=3, R=2:
        // (1/2) * (1*1 + (2/3)*1) = 0.83333...
        let ap = average_precision_at_k(&[0, 1, 0], 0, 3, 2);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ap_no_relevant_items_scores_zero() {
        assert_eq!(average_precision_at_k(&[1, 1], 0, 2, 0), 0.0);
    }

    #[test]
    fn ap_clamps_oversized_k() {
        let full = average_precision_at_k(&[0, 1, 0], 0, 3, 2);
        let clamped = average_precision_at_k(&[0, 1, 0], 0, 50, 2);
        assert_eq!(full, clamped);
    }

    #[test]
    fn ap_by_k_normalization() {
        // one relevant item at rank 1, k=2: min(R,k) gives 1.0, by-k gives 0.5
        assert_eq!(
            average_precision_with(&[0, 1], 0, 2, 1, ApNormalization::MinRelevantK),
            1.0
        );
        assert_eq!(
            average_precision_with(&[0, 1], 0, 2, 1, ApNormalization::ByK),
            0.5
        );
    }

    #[test]
    fn method_parsing_round_trips() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "cosine".parse::<Method>().unwrap_err().to_string();
        assert!(
            err.contains("raw-euclidean"),
            "error lists valid methods: {err}"
        );
    }

    #[test]
    fn evaluate_is_deterministic() {
        let ds = gen_synthetic(3, 12, 8, 1.0, 6.0, 4).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.6,
            val_per_class: 2,
            seed: 1,
        };
        let (train_ds, _, test_ds) = stratified_split(&ds, &spec).unwrap();
        let opts = EvalOptions::default();
        let a = evaluate(&MethodArtifacts::RawHamming, &test_ds, &train_ds, &opts).unwrap();
        let b = evaluate(&MethodArtifacts::RawHamming, &test_ds, &train_ds, &opts).unwrap();
        assert_eq!(a.map.to_bits(), b.map.to_bits());
        assert_eq!(a.per_query_ap, b.per_query_ap);
    }

    #[test]
    fn evaluate_reports_method_and_bits() {
        let ds = gen_synthetic(2, 10, 6, 1.0, 5.0, 9).unwrap();
        let spec = SplitSpec {
            train_fraction: 0.6,
            val_per_class: 1,
            seed: 0,
        };
        let (train_ds, _, test_ds) = stratified_split(&ds, &spec).unwrap();
        let hasher = LshHasher::new(6, 16, 3).unwrap();
        let opts = EvalOptions::default();
        let r = evaluate(&MethodArtifacts::Lsh(&hasher), &test_ds, &train_ds, &opts).unwrap();
        assert_eq!(r.method, "lsh");
        assert_eq!(r.hash_bits, Some(16));
        let r = evaluate(&MethodArtifacts::RawEuclidean, &test_ds, &train_ds, &opts).unwrap();
        assert_eq!(r.method, "raw-euclidean");
        assert_eq!(r.hash_bits, None);
        let r = evaluate(&MethodArtifacts::RawHamming, &test_ds, &train_ds, &opts).unwrap();
        assert_eq!(r.hash_bits, Some(6));
    }

    #[test]
    fn evaluate_rejects_model_dim_mismatch() {
        let ds = gen_synthetic(2, 6, 4, 1.0, 5.0, 2).unwrap();
        let params = init_params(&[8, 4, 2], 0).unwrap();
        let opts = EvalOptions::default();
        assert!(matches!(
            evaluate(&MethodArtifacts::Milan(&params), &ds, &ds, &opts),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn oversized_k_is_clamped_not_an_error() {
        let ds = gen_synthetic(2, 6, 4, 1.0, 5.0, 8).unwrap();
        let opts = EvalOptions {
            top_k: 10_000,
            ..Default::default()
        };
        let r = evaluate(&MethodArtifacts::RawHamming, &ds, &ds, &opts).unwrap();
        assert_eq!(r.k, 10_000);
        assert!(r.map > 0.0);
    }

    #[test]
    fn single_value_sweep_equals_direct_evaluation() {
        let ds = gen_synthetic(3, 14, 6, 1.0, 8.0, 12).unwrap();
        let split = SplitSpec {
            train_fraction: 0.6,
            val_per_class: 2,
            seed: 4,
        };
        let ctx = SweepContext {
            dataset: &ds,
            split,
            train: TrainConfig::default(),
            method: Method::RawHamming,
            eval: EvalOptions {
                top_k: 20,
                ..Default::default()
            },
            lsh_seed: 0,
        };
        let spec = SweepSpec {
            axis: SweepAxis::TopK,
            values: vec![5.0],
        };
        let rows = run_sweep(&spec, &ctx).unwrap();
        assert_eq!(rows.len(), 1);
        let (train_ds, _, test_ds) = stratified_split(&ds, &split).unwrap();
        let direct = evaluate(
            &MethodArtifacts::RawHamming,
            &test_ds,
            &train_ds,
            &EvalOptions {
                top_k: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rows[0].map.to_bits(), direct.map.to_bits());
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("axis,value,map,mean_latency_us\n"));
        assert!(csv.lines().nth(1).unwrap().starts_with("top_k,5,"));
    }

    #[test]
    fn sweep_validates_axis_values() {
        let ds = gen_synthetic(3, 14, 6, 1.0, 8.0, 12).unwrap();
        let split = SplitSpec {
            train_fraction: 0.6,
            val_per_class: 2,
            seed: 4,
        };
        let ctx = SweepContext {
            dataset: &ds,
            split,
            train: TrainConfig::default(),
            method: Method::RawHamming,
            eval: EvalOptions::default(),
            lsh_seed: 0,
        };
        let bad_axis = SweepSpec {
            axis: SweepAxis::HashBits,
            values: vec![16.0],
        };
        assert!(matches!(run_sweep(&bad_axis, &ctx), Err(Error::Config(_))));
        let bad_value = SweepSpec {
            axis: SweepAxis::TopK,
            values: vec![2.5],
        };
        assert!(matches!(run_sweep(&bad_value, &ctx), Err(Error::Config(_))));
        let empty = SweepSpec {
            axis: SweepAxis::TopK,
            values: vec![],
        };
        assert!(matches!(run_sweep(&empty, &ctx), Err(Error::Config(_))));
    }

    #[test]
    fn latency_bench_handles_tiny_archives() {
        let s = bench_latency(SearchKind::Hamming { bits: 32 }, 1, 20, 10, 0).unwrap();
        assert!(s.mean_us >= 0.0);
        assert!(s.p95_us >= s.p50_us * 0.0);
        let s = bench_latency(SearchKind::Euclidean { dim: 8 }, 1, 5, 10, 0).unwrap();
        assert!(s.mean_us >= 0.0);
    }

    #[test]
    fn latency_bench_validates_inputs() {
        assert!(matches!(
            bench_latency(SearchKind::Hamming { bits: 32 }, 10, 5, 3, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            bench_latency(SearchKind::Hamming { bits: 32 }, 0, 5, 10, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn latency_bench_is_reasonably_stable() {
        let kind = SearchKind::Hamming { bits: 64 };
        let a = bench_latency(kind, 2000, 10, 10, 1).unwrap();
        let b = bench_latency(kind, 2000, 10, 100, 1).unwrap();
        let ratio = a.mean_us / b.mean_us;
        assert!(
            (0.5..=2.0).contains(&ratio),
            "means diverge: {} vs {}",
            a.mean_us,
            b.mean_us
        );
    }
}
