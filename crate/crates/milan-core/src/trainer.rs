//! The training loop: mine a triplet batch, forward the batch, apply the
//! combined objective, backpropagate, take an Adam step; validate
//! periodically and keep the checkpoint with the best validation mAP@k.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, MethodArtifacts};
use crate::miner::{MinerConfig, MiningMode, Triplet, TripletMiner};
use crate::net::{
    adam_step, backward, feature_input, forward, init_params, AdamConfig, AdamState, NetworkParams,
    DEFAULT_NEG_SLOPE,
};
pub use crate::net::{load_checkpoint, save_checkpoint};
use crate::objective::{combined_loss, LossWeights, PushBalanceScope, TripletBatch};
use crate::seeds;

/// Full training configuration. Serializes to a flat JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Hash code length K (network output width).
    pub hash_bits: usize,
    /// Hidden layer widths between the input and the K-wide output.
    pub hidden_dims: Vec<usize>,
    #[serde(flatten)]
    pub loss: LossWeights,
    #[serde(flatten)]
    pub miner: MinerConfig,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    /// Validate every this many steps (0 disables validation and model
    /// selection; the final parameters are returned).
    pub eval_every: usize,
    /// Cutoff for validation mAP@k.
    pub val_top_k: usize,
    /// Seed of the weight-initialization stream.
    pub seed: u64,
    pub push_balance_scope: PushBalanceScope,
    /// Scale inputs to unit L2 norm before the network.
    pub unit_norm: bool,
    pub neg_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hash_bits: 32,
            hidden_dims: vec![1024, 512],
            loss: LossWeights::default(),
            miner: MinerConfig::default(),
            adam: AdamConfig::default(),
            epochs: 30,
            iters_per_epoch: 300,
            eval_every: 300,
            val_top_k: 20,
            seed: 42,
            push_balance_scope: PushBalanceScope::default(),
            unit_norm: false,
            neg_slope: f64::from(DEFAULT_NEG_SLOPE),
        }
    }
}

impl TrainConfig {
    /// Fans one master seed out to the per-component streams.
    pub fn with_master_seed(mut self, master: u64) -> Self {
        self.seed = master;
        self.miner.seed = seeds::stream_seed(master, seeds::MINER);
        self
    }

    /// Layer sizes for a given input dimension.
    pub fn dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.hash_bits);
        dims
    }

    fn validate(&self) -> Result<()> {
        if self.hash_bits == 0 {
            return Err(Error::Config("hash_bits must be at least 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if self.epochs > 0 && self.iters_per_epoch == 0 {
            return Err(Error::Config("iters_per_epoch must be at least 1".into()));
        }
        if self.val_top_k == 0 {
            return Err(Error::Config("val_top_k must be at least 1".into()));
        }
        self.loss.validate()
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub step: u64,
    pub total: f64,
    pub metric: f64,
    pub push: f64,
    pub balancing: f64,
    pub val_map: Option<f64>,
}

/// The loss trajectory of a run, exportable as CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainHistory {
    pub entries: Vec<HistoryEntry>,
}

impl TrainHistory {
    /// CSV with header `step,total,metric,push,balancing,val_map`; the
    /// validation column is empty on steps without a validation pass.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,total,metric,push,balancing,val_map\n");
        for e in &self.entries {
            let val = e.val_map.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.step, e.total, e.metric, e.push, e.balancing, val
            ));
        }
        out
    }

    /// The best validation mAP recorded, if any step validated.
    pub fn best_val_map(&self) -> Option<f64> {
        self.entries
            .iter()
            .filter_map(|e| e.val_map)
            .fold(None, |best, v| Some(best.map_or(v, |b: f64| b.max(v))))
    }
}

/// mAP@k of `params` retrieving `archive` items for `queries`, both encoded
/// to hash codes and ranked by Hamming distance.
pub fn validate(
    params: &NetworkParams,
    queries: &LabeledDataset,
    archive: &LabeledDataset,
    k: usize,
) -> Result<f64> {
    validate_with(params, queries, archive, k, false)
}

fn validate_with(
    params: &NetworkParams,
    queries: &LabeledDataset,
    archive: &LabeledDataset,
    k: usize,
    unit_norm: bool,
) -> Result<f64> {
    let opts = EvalOptions {
        top_k: k,
        unit_norm,
        ..Default::default()
    };
    Ok(evaluate(&MethodArtifacts::Milan(params), queries, archive, &opts)?.map)
}

/// Trains a network on `ds_train`, validating against `ds_val` (queries)
/// with `ds_train` as the search archive.
///
/// Returns the parameters with the best recorded validation mAP (ties go to
/// the latest; without any validation pass, the final parameters) and the
/// full loss history. Deterministic given the configured seeds; the input
/// datasets are never modified.
pub fn train(
    ds_train: &LabeledDataset,
    ds_val: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainHistory)> {
    cfg.validate()?;
    if ds_train.dim() != ds_val.dim() {
        return Err(Error::Validation(format!(
            "train dim {} does not match validation dim {}",
            ds_train.dim(),
            ds_val.dim()
        )));
    }
    if ds_train.class_count() != ds_val.class_count() {
        return Err(Error::Validation(
            "train and validation sets declare different label spaces".into(),
        ));
    }
    let mut params = init_params(
        &cfg.dims(ds_train.dim()),
        seeds::stream_seed(cfg.seed, seeds::INIT),
    )?
    .with_neg_slope(cfg.neg_slope as f32);
    let mut history = TrainHistory::default();
    let total_steps = (cfg.epochs * cfg.iters_per_epoch) as u64;
    if total_steps == 0 {
        return Ok((params, history));
    }
    let mut adam = AdamState::new(cfg.adam, &params);
    let mut miner = TripletMiner::new(ds_train, cfg.miner)?;
    let mut best: Option<(f64, NetworkParams)> = None;

    for step in 1..=total_steps {
        let triplets = mine_batch(&mut miner, &params, ds_train, cfg)?;

        // forward each distinct sample once; triplet slots index into the
        // deduplicated embedding list
        let unique: Vec<usize> = triplets
            .iter()
            .flat_map(|t| [t.anchor, t.positive, t.negative])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let slot_of = |idx: usize| unique.binary_search(&idx).expect("index was collected");
        let mut traces = Vec::with_capacity(unique.len());
        let mut embeddings = Vec::with_capacity(unique.len());
        for &idx in &unique {
            let trace = forward(
                &params,
                &feature_input(ds_train.feature(idx), cfg.unit_norm),
            )?;
            embeddings.push(trace.output.clone());
            traces.push(trace);
        }
        let batch = TripletBatch::new(
            embeddings,
            triplets
                .iter()
                .map(|t| [slot_of(t.anchor), slot_of(t.positive), slot_of(t.negative)])
                .collect(),
        )?;

        let (parts, grad_v) = combined_loss(&batch, &cfg.loss, cfg.push_balance_scope)?;
        if !parts.total.is_finite() {
            return Err(Error::Numeric(format!(
                "loss diverged to {} at step {step}",
                parts.total
            )));
        }
        let (grads, _) = backward(&params, &traces, &grad_v)?;
        adam_step(&mut adam, &mut params, &grads)
            .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;

        let val_map =
            if cfg.eval_every > 0 && (step % cfg.eval_every as u64 == 0 || step == total_steps) {
                let map = validate_with(&params, ds_val, ds_train, cfg.val_top_k, cfg.unit_norm)?;
                if best.as_ref().is_none_or(|(b, _)| map >= *b) {
                    best = Some((map, params.clone()));
                }
                Some(map)
            } else {
                None
            };
        history.entries.push(HistoryEntry {
            step,
            total: parts.total,
            metric: parts.metric,
            push: parts.push,
            balancing: parts.balancing,
            val_map,
        });
    }

    let chosen = best.map(|(_, p)| p).unwrap_or(params);
    Ok((chosen, history))
}

fn mine_batch(
    miner: &mut TripletMiner,
    params: &NetworkParams,
    ds: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<Vec<Triplet>> {
    match cfg.miner.mode {
        MiningMode::Random => miner.sample_batch(None),
        MiningMode::MarginViolating => {
            let margin = cfg.loss.margin;
            // resampled candidates revisit the same indices; memoize the
            // embeddings for the duration of this batch
            let cache: std::cell::RefCell<std::collections::HashMap<usize, Vec<f64>>> =
                std::cell::RefCell::new(std::collections::HashMap::new());
            let embed_of = |i: usize| -> Vec<f64> {
                if let Some(e) = cache.borrow().get(&i) {
                    return e.clone();
                }
                let e = forward(params, &feature_input(ds.feature(i), cfg.unit_norm))
                    .expect("validated features through finite parameters")
                    .output;
                cache.borrow_mut().insert(i, e.clone());
                e
            };
            let violates = move |t: &Triplet| {
                let (a, p, n) = (
                    embed_of(t.anchor),
                    embed_of(t.positive),
                    embed_of(t.negative),
                );
                let d_ap: f64 = a.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum();
                let d_an: f64 = a.iter().zip(&n).map(|(x, y)| (x - y) * (x - y)).sum();
                d_ap - d_an + margin > 0.0
            };
            miner.sample_batch(Some(&violates))
        }
    }
}
