use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BatchRecord, Dataset, Split};
use crate::error::{config_err, Error, Result};
use crate::tensor::Tensor;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel statistics. For `[N, C, H, W]` inputs a channel is a plane;
/// for `[N, D]` inputs every feature is its own channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub source: Split,
}

fn channel_layout(sample_shape: &[usize]) -> (usize, usize) {
    (sample_shape[0], sample_shape[1..].iter().product())
}

/// Mean and population standard deviation per channel, std floored.
pub fn compute_stats(ds: &Dataset) -> NormStats {
    let (c, inner) = channel_layout(ds.sample_shape());
    let mut sum = vec![0.0; c];
    let mut sq = vec![0.0; c];
    for sample in ds.inputs().data().chunks(c * inner) {
        for (ch, plane) in sample.chunks(inner).enumerate() {
            for &v in plane {
                sum[ch] += v;
            }
        }
    }
    let count = (ds.len() * inner) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    for sample in ds.inputs().data().chunks(c * inner) {
        for (ch, plane) in sample.chunks(inner).enumerate() {
            for &v in plane {
                sq[ch] += (v - mean[ch]).powi(2);
            }
        }
    }
    let std = sq.iter().map(|s| (s / count).sqrt().max(STD_FLOOR)).collect();
    NormStats { mean, std, source: ds.split() }
}

/// `(x − mean) / std` per channel with statistics taken from `stats_from`,
/// which must be a train split.
pub fn normalize(ds: &Dataset, stats_from: &Dataset) -> Result<Dataset> {
    if stats_from.split() != Split::Train {
        return Err(Error::Contract("normalization statistics must come from a train split".into()));
    }
    if ds.sample_shape() != stats_from.sample_shape() {
        return Err(Error::Dimension(format!(
            "sample shape {:?} differs from statistics source {:?}",
            ds.sample_shape(),
            stats_from.sample_shape()
        )));
    }
    let stats = compute_stats(stats_from);
    let (c, inner) = channel_layout(ds.sample_shape());
    let mut data = ds.inputs().data().to_vec();
    for sample in data.chunks_mut(c * inner) {
        for (ch, plane) in sample.chunks_mut(inner).enumerate() {
            for v in plane {
                *v = (*v - stats.mean[ch]) / stats.std[ch];
            }
        }
    }
    let inputs = Tensor::new(ds.inputs().shape().to_vec(), data)?;
    Ok(ds.with_inputs(inputs, Some(stats)))
}

/// Random horizontal flip and pad-then-crop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub flip: bool,
    pub pad: usize,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self { flip: true, pad: 4 }
    }
}

/// Mirrors each `h × w` plane of a `[c, h, w]` image left to right.
pub fn flip_horizontal(img: &mut [f64], c: usize, h: usize, w: usize) {
    for row in img[..c * h * w].chunks_mut(w) {
        row.reverse();
    }
}

/// Zero-pads a `[c, h, w]` image by `pad` on every side and crops the
/// `h × w` window whose top-left corner sits at `(oy, ox)` in the padded
/// image.
pub fn pad_crop(img: &[f64], c: usize, h: usize, w: usize, pad: usize, oy: usize, ox: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + oy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + ox) as isize - pad as isize;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * h + y) * w + x] = img[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

pub fn augment<R: Rng + ?Sized>(batch: &BatchRecord, policy: &AugmentPolicy, rng: &mut R) -> Result<BatchRecord> {
    let shape = batch.inputs.shape();
    if shape.len() != 4 {
        return config_err(format!("augmentation needs [N, C, H, W] inputs, got {shape:?}"));
    }
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let mut data = Vec::with_capacity(batch.inputs.len());
    for img in batch.inputs.data().chunks(c * h * w) {
        let mut img = img.to_vec();
        if policy.flip && rng.random_bool(0.5) {
            flip_horizontal(&mut img, c, h, w);
        }
        if policy.pad > 0 {
            let oy = rng.random_range(0..=2 * policy.pad);
            let ox = rng.random_range(0..=2 * policy.pad);
            img = pad_crop(&img, c, h, w, policy.pad, oy, ox);
        }
        data.extend(img);
    }
    Ok(BatchRecord { inputs: Tensor::new(shape.to_vec(), data)?, labels: batch.labels.clone(), augmented: true })
}
