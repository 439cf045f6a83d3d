use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Shape of a synthetic gaussian-blobs task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobsConfig {
    pub classes: usize,
    pub dims: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
}

impl Default for BlobsConfig {
    /// 4 classes in 8 dimensions, separation 3, 2000 train / 1000 test samples.
    fn default() -> Self {
        Self { classes: 4, dims: 8, train_per_class: 500, test_per_class: 250, separation: 3.0 }
    }
}

impl BlobsConfig {
    /// Train and test splits drawn from one seeded stream.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = gen_gaussian_blobs(self.classes, self.dims, self.train_per_class, self.separation, Split::Train, &mut rng)?;
        let test = gen_gaussian_blobs(self.classes, self.dims, self.test_per_class, self.separation, Split::Test, &mut rng)?;
        Ok((train, test))
    }
}

/// Unit class directions. With `classes <= dims` these are the vertices of
/// a regular simplex (centred one-hot vectors, renormalised), which keeps
/// every pair of classes equally far apart. Otherwise they are random unit
/// vectors from a generator seeded by `(classes, dims)` alone, so every
/// split of the same task shares its centres.
pub fn class_directions(classes: usize, dims: usize) -> Vec<Vec<f64>> {
    if classes <= dims {
        let inv = 1.0 / classes as f64;
        (0..classes)
            .map(|c| {
                let mut v: Vec<f64> = (0..dims).map(|d| if d >= classes { 0.0 } else { -inv }).collect();
                v[c] += 1.0;
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter().map(|x| x / norm).collect()
            })
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(((classes as u64) << 32) ^ dims as u64);
        (0..classes)
            .map(|_| {
                let v: Vec<f64> = (0..dims).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x: &f64| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| x / norm).collect()
            })
            .collect()
    }
}

/// Class `c` ~ N(separation · direction(c), I). Samples are interleaved by
/// class: sample `i` has label `i % classes`.
pub fn gen_gaussian_blobs<R: Rng + ?Sized>(
    classes: usize,
    dims: usize,
    n_per_class: usize,
    separation: f64,
    split: Split,
    rng: &mut R,
) -> Result<Dataset> {
    if classes < 2 || dims < 1 || n_per_class < 1 {
        return config_err(format!(
            "blobs need classes >= 2, dims >= 1 and samples per class >= 1 (got {classes}, {dims}, {n_per_class})"
        ));
    }
    if !separation.is_finite() || separation < 0.0 {
        return config_err(format!("blob separation must be finite and non-negative, got {separation}"));
    }
    let dirs = class_directions(classes, dims);
    let n = classes * n_per_class;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for d in 0..dims {
            let z: f64 = rng.sample(StandardNormal);
            data.push(separation * dirs[c][d] + z);
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![n, dims], data)?, labels, classes, split)
}
