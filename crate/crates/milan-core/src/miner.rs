//! Triplet mini-batch sampling: anchor and positive from one class, negative
//! from another, with an optional margin-violating filter that resamples
//! triplets whose hinge term is currently zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};

/// Dataset indices of one training triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// How candidate triplets are accepted into a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MiningMode {
    /// Accept every draw.
    #[default]
    Random,
    /// Resample until the triplet violates the margin (carries nonzero hinge
    /// loss), up to the resample cap; the last draw is kept regardless.
    MarginViolating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinerConfig {
    /// Triplets per batch (M).
    pub batch_size: usize,
    #[serde(rename = "mining_mode")]
    pub mode: MiningMode,
    /// Draw budget per batch slot in margin-violating mode.
    pub max_resamples: usize,
    #[serde(rename = "miner_seed")]
    pub seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            batch_size: 30,
            mode: MiningMode::Random,
            max_resamples: 20,
            seed: 0,
        }
    }
}

/// Draws triplet batches from a labeled dataset. Owns its random stream; use
/// one miner per trainer, not shared.
#[derive(Debug, Clone)]
pub struct TripletMiner {
    cfg: MinerConfig,
    class_members: Vec<Vec<usize>>,
    nonempty_classes: Vec<usize>,
    total: usize,
    rng: ChaCha8Rng,
}

impl TripletMiner {
    pub fn new(ds: &LabeledDataset, cfg: MinerConfig) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if cfg.max_resamples == 0 {
            return Err(Error::Config("max_resamples must be at least 1".into()));
        }
        let class_members = ds.class_members();
        let nonempty_classes: Vec<usize> = class_members
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(c, _)| c)
            .collect();
        if nonempty_classes.len() < 2 {
            return Err(Error::Config(
                "triplet mining needs samples from at least two classes".into(),
            ));
        }
        Ok(Self {
            cfg,
            class_members,
            nonempty_classes,
            total: ds.len(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    pub fn config(&self) -> &MinerConfig {
        &self.cfg
    }

    /// Draws one batch of `batch_size` triplets.
    ///
    /// In margin-violating mode `violates` must report whether a candidate
    /// currently carries nonzero hinge loss; each slot is resampled until it
    /// does, up to `max_resamples` draws, after which the last draw is kept.
    pub fn sample_batch(
        &mut self,
        violates: Option<&dyn Fn(&Triplet) -> bool>,
    ) -> Result<Vec<Triplet>> {
        let filter = match (self.cfg.mode, violates) {
            (MiningMode::Random, v) => {
                // a filter passed in random mode is simply unused
                let _ = v;
                None
            }
            (MiningMode::MarginViolating, Some(v)) => Some(v),
            (MiningMode::MarginViolating, None) => {
                return Err(Error::Config(
                    "margin-violating mining needs an embedding-based margin test".into(),
                ))
            }
        };
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let mut triplet = self.draw()?;
            if let Some(violates) = filter {
                for _ in 1..self.cfg.max_resamples {
                    if violates(&triplet) {
                        break;
                    }
                    triplet = self.draw()?;
                }
            }
            batch.push(triplet);
        }
        Ok(batch)
    }

    fn draw(&mut self) -> Result<Triplet> {
        // anchor class uniform over classes, then uniform within the class
        let class = self.nonempty_classes[self.rng.random_range(0..self.nonempty_classes.len())];
        let members = &self.class_members[class];
        if members.len() < 2 {
            return Err(Error::Config(format!(
                "class {class} has fewer than 2 samples; cannot form a positive pair"
            )));
        }
        let a_pos = self.rng.random_range(0..members.len());
        let p_pos = {
            let r = self.rng.random_range(0..members.len() - 1);
            if r >= a_pos {
                r + 1
            } else {
                r
            }
        };
        // negative uniform over all samples outside the anchor class
        let others = self.total - members.len();
        debug_assert!(others > 0);
        let mut r = self.rng.random_range(0..others);
        let mut negative = None;
        for (c, m) in self.class_members.iter().enumerate() {
            if c == class {
                continue;
            }
            if r < m.len() {
                negative = Some(m[r]);
                break;
            }
            r -= m.len();
        }
        Ok(Triplet {
            anchor: members[a_pos],
            positive: members[p_pos],
            negative: negative.expect("negative pool is non-empty"),
        })
    }
}
