//! Labeled feature datasets: binary file I/O, stratified splitting, and
//! synthetic cluster generation.
//!
//! This is the only data-ingestion boundary of the crate. Feature vectors are
//! consumed from files produced by an external extractor (or by
//! [`gen_synthetic`] at desk scale); nothing here touches images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic bytes of the feature file format.
const MAGIC: &[u8; 5] = b"FSTR1";

/// A set of real-valued feature vectors with one class label per vector.
///
/// Rows are stored contiguously in a flat buffer; [`feature`](Self::feature)
/// views row `i`. Datasets are immutable after construction and cheap to share
/// across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f32>,
    labels: Vec<u32>,
    dim: usize,
    class_count: usize,
}

impl LabeledDataset {
    /// Builds a dataset, validating every invariant: non-empty, consistent
    /// shapes, finite values, and labels below `class_count`.
    pub fn new(
        features: Vec<f32>,
        labels: Vec<u32>,
        dim: usize,
        class_count: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation(
                "dataset must contain at least one sample".into(),
            ));
        }
        if dim == 0 {
            return Err(Error::Validation(
                "feature dimension must be positive".into(),
            ));
        }
        let expected = labels
            .len()
            .checked_mul(dim)
            .ok_or_else(|| Error::Validation("dataset size overflows".into()))?;
        if features.len() != expected {
            return Err(Error::Validation(format!(
                "feature buffer holds {} values, expected {} ({} samples x dim {})",
                features.len(),
                expected,
                labels.len(),
                dim
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature value at flat index {pos}"
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= class_count)
        {
            return Err(Error::Validation(format!(
                "label {l} of sample {i} is outside class count {class_count}"
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            class_count,
        })
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false: construction rejects empty datasets.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension D.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Declared number of classes C (labels are `0..C`).
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Feature row `i`.
    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// The flat row-major feature buffer.
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    /// Sample indices grouped by class id.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l as usize].push(i);
        }
        members
    }

    /// Copies the given rows into a new dataset with the same `dim` and
    /// `class_count`.
    fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.feature(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.dim, self.class_count)
    }
}

/// How to partition a dataset into train / validation / test.
///
/// The split is stratified per class: `ceil(train_fraction * n_c)` samples go
/// to the train pool (validation is carved out of that pool), the remainder to
/// test.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_per_class: usize,
    pub seed: u64,
}

/// Writes `ds` in the binary feature file format.
///
/// Layout: `"FSTR1"` | N: u64 LE | D: u64 LE | C: u64 LE | N*D f32 LE
/// row-major | N u32 LE labels.
pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    w.write_all(&(ds.dim() as u64).to_le_bytes())?;
    w.write_all(&(ds.class_count() as u64).to_le_bytes())?;
    for v in ds.features() {
        w.write_all(&v.to_le_bytes())?;
    }
    for l in ds.labels() {
        w.write_all(&l.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset written by [`save_dataset`]. Roundtrips are bit-exact.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let n = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;
    let class_count = read_u64(&mut r)? as usize;
    let value_count = n
        .checked_mul(dim)
        .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
    let mut features = vec![0f32; value_count];
    for v in &mut features {
        *v = read_f32(&mut r)?;
    }
    let mut labels = vec![0u32; n];
    for l in &mut labels {
        *l = read_u32(&mut r)?;
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after labels".into()));
    }
    LabeledDataset::new(features, labels, dim, class_count)
}

/// Stratified train/val/test split, deterministic in `spec.seed`.
///
/// Classes with zero samples are skipped; classes too small to supply
/// `val_per_class` validation samples plus at least one train and one test
/// sample are a configuration error.
pub fn stratified_split(
    ds: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    if spec.val_per_class == 0 {
        return Err(Error::Config("val_per_class must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, mut members) in ds.class_members().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let n_c = members.len();
        let train_count = (spec.train_fraction * n_c as f64).ceil() as usize;
        let test_count = n_c - train_count;
        if train_count < spec.val_per_class + 1 || test_count == 0 {
            return Err(Error::Config(format!(
                "class {class} has {n_c} samples; needs at least {} for train \
                 ({} validation + 1) plus 1 for test",
                spec.val_per_class + 2,
                spec.val_per_class
            )));
        }
        members.shuffle(&mut rng);
        let (pool, test) = members.split_at(train_count);
        let (train, val) = pool.split_at(train_count - spec.val_per_class);
        train_idx.extend_from_slice(train);
        val_idx.extend_from_slice(val);
        test_idx.extend_from_slice(test);
    }
    Ok((
        ds.subset(&train_idx)?,
        ds.subset(&val_idx)?,
        ds.subset(&test_idx)?,
    ))
}

/// Generates `classes` Gaussian clusters in `R^dim`.
///
/// Cluster means are drawn uniformly on the sphere of radius `separation`;
/// each sample adds isotropic noise of scale `spread`. Labels are cluster ids.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if per_class < 2 {
        return Err(Error::Config("need at least 2 samples per class".into()));
    }
    if dim < 2 {
        return Err(Error::Config("need dimension of at least 2".into()));
    }
    if !spread.is_finite() || spread <= 0.0 {
        return Err(Error::Config(format!(
            "spread must be positive, got {spread}"
        )));
    }
    if !separation.is_finite() || separation <= 0.0 {
        return Err(Error::Config(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    let mut mean = vec![0f64; dim];
    for class in 0..classes {
        loop {
            for m in &mut mean {
                *m = rng.sample(StandardNormal);
            }
            let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for m in &mut mean {
                    *m *= separation / norm;
                }
                break;
            }
        }
        for _ in 0..per_class {
            for &m in &mean {
                let noise: f64 = rng.sample(StandardNormal);
                features.push((m + spread * noise) as f32);
            }
            labels.push(class as u32);
        }
    }
    LabeledDataset::new(features, labels, dim, classes)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("file truncated".into()))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}
