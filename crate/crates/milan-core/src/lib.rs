//! Metric-learning hashing for feature-vector retrieval.
//!
//! The pipeline: load (or synthesize) labeled feature vectors, train a small
//! fully-connected network mapping them into `[0, 1]^K` under a combined
//! triplet / saturation / bit-balance objective, threshold the outputs into
//! K-bit codes, and serve exact Hamming top-k retrieval. An evaluation
//! harness measures mAP@k and search latency and sweeps experiment axes, with
//! raw-feature Euclidean, raw-feature Hamming, and random-projection (LSH)
//! baselines for comparison.
//!
//! Modules follow the pipeline: [`dataset`] -> [`net`] + [`objective`] +
//! [`miner`] -> [`trainer`] -> [`hashing`] -> [`eval`].

pub mod dataset;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod miner;
pub mod net;
pub mod objective;
pub mod seeds;
pub mod trainer;

pub use dataset::{LabeledDataset, SplitSpec};
pub use error::{Error, Result};
pub use eval::{EvalOptions, EvalReport, Method};
pub use hashing::{HammingIndex, HashCode, LshHasher};
pub use net::NetworkParams;
pub use objective::LossWeights;
pub use trainer::{TrainConfig, TrainHistory};
