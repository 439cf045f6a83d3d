//! Datasets, batching and preprocessing.

mod blobs;
mod idx;
mod manifest;
mod transform;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use blobs::{class_directions, gen_gaussian_blobs, BlobsConfig};
pub use idx::{dataset_from_idx, dataset_to_idx, decode_idx, encode_idx, load_idx, read_idx_file, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use manifest::{DatasetManifest, DATA_DIR_ENV};
pub use transform::{augment, compute_stats, flip_horizontal, normalize, pad_crop, AugmentPolicy, NormStats, STD_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled samples. `inputs` has shape `[N, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
    norm: Option<NormStats>,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if inputs.shape().len() < 2 {
            return Err(Error::Dimension(format!("dataset inputs need a sample axis, got {:?}", inputs.shape())));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::Data(format!("{} inputs but {} labels", inputs.shape()[0], labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Self { inputs, labels, classes, split, norm: None })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Statistics this dataset was normalised with, if any.
    pub fn norm(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// `[C, H, W]` samples.
    pub fn is_spatial(&self) -> bool {
        self.sample_shape().len() == 3
    }

    pub fn batch(&self, idx: &[usize]) -> Result<BatchRecord> {
        Ok(BatchRecord {
            inputs: self.inputs.select_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            augmented: false,
        })
    }

    /// Consecutive batches in storage order; the last may be short.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = BatchRecord> + '_ {
        let n = self.len();
        (0..n).step_by(batch_size.max(1)).map(move |s| {
            let idx: Vec<usize> = (s..(s + batch_size).min(n)).collect();
            self.batch(&idx).expect("indices in range")
        })
    }

    /// First `n` samples.
    pub fn truncate(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let mut out = self.clone();
        out.inputs = self.inputs.slice_rows(0, n)?;
        out.labels.truncate(n);
        Ok(out)
    }

    pub(crate) fn with_inputs(&self, inputs: Tensor, norm: Option<NormStats>) -> Self {
        Self { inputs, labels: self.labels.clone(), classes: self.classes, split: self.split, norm }
    }
}

/// One minibatch. Labels travel with the inputs but compression never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub augmented: bool,
}

/// Endless stream of minibatch indices. Each epoch is a fresh seeded
/// permutation; every sample appears exactly once per epoch and the final
/// batch of an epoch may be short.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Config("batch sampler needs samples and a positive batch size".into()));
        }
        let mut s = Self { n, batch_size, order: (0..n).collect(), pos: 0, epoch: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos >= self.n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + self.batch_size).min(self.n);
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}
