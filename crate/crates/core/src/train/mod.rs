//! Teacher pre-training, adversarial compression and baseline loops.
//!
//! Every loop is single-threaded and fully determined by its seed: batch
//! order, parameter initialisation, dropout masks and augmentation each
//! draw from their own ChaCha stream derived from [`LoopConfig::seed`].

mod compress;
mod config;
mod metrics;
mod optim;
mod supervised;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, AugmentPolicy, BatchRecord, BatchSampler, Dataset};
use crate::error::{dim_err, Error, Result};
use crate::nn::{Network, Prediction};
use crate::tensor::Tensor;

pub use compress::{
    compress_step, d_accuracy_on, d_input_width, d_phase, run_compression, student_phase, Compressed, DPhaseReport,
    ModeTrace, StepReport, StudentPhaseReport,
};
pub use config::{BaselineConfig, BaselineKind, CompressionConfig, DInput, LoopConfig};
pub use metrics::{MetricsRow, RunMetrics};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use supervised::{run_baseline, train_teacher, Trained};

pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_D_INIT: u64 = 2;
pub(crate) const STREAM_DROPOUT: u64 = 3;
pub(crate) const STREAM_AUGMENT: u64 = 4;

/// Independent generator number `stream` for `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Evaluation-mode outputs for every row of `inputs`, computed in chunks.
pub fn predict_all(net: &Network, inputs: &Tensor) -> Result<Prediction> {
    const CHUNK: usize = 1000;
    let n = inputs.shape()[0];
    let (mut logits, mut feats) = (Vec::new(), Vec::new());
    let (mut lshape, mut fshape) = (Vec::new(), Vec::new());
    for start in (0..n).step_by(CHUNK) {
        let p = net.predict(&inputs.slice_rows(start, (start + CHUNK).min(n))?)?;
        lshape = p.logits.shape().to_vec();
        fshape = p.feature.shape().to_vec();
        logits.extend_from_slice(p.logits.data());
        feats.extend_from_slice(p.feature.data());
    }
    lshape[0] = n;
    fshape[0] = n;
    Ok(Prediction { logits: Tensor::new(lshape, logits)?, feature: Tensor::new(fshape, feats)? })
}

/// Top-1 error of `net` on `ds`.
pub fn error_rate(net: &Network, ds: &Dataset) -> Result<f64> {
    let logits = predict_all(net, ds.inputs())?.logits;
    Ok(error_of(&logits, ds.labels()))
}

pub(crate) fn error_of(logits: &Tensor, labels: &[usize]) -> f64 {
    let wrong = logits.argmax_rows().iter().zip(labels).filter(|(p, l)| p != l).count();
    wrong as f64 / labels.len().max(1) as f64
}

pub(crate) fn check_input(net: &Network, ds: &Dataset) -> Result<()> {
    if net.spec().input_shape[..] != *ds.sample_shape() {
        return dim_err(format!(
            "{} expects samples of shape {:?}, dataset has {:?}",
            net.spec().name,
            net.spec().input_shape,
            ds.sample_shape()
        ));
    }
    Ok(())
}

pub(crate) fn check_finite(net: &Network, step: usize) -> Result<()> {
    if net.params().iter().all(Tensor::all_finite) {
        Ok(())
    } else {
        Err(Error::Divergence { step, what: format!("non-finite parameters in {}", net.spec().name) })
    }
}

/// Seeded minibatch stream with optional augmentation.
pub(crate) struct Batches<'a> {
    ds: &'a Dataset,
    sampler: BatchSampler,
    policy: Option<AugmentPolicy>,
    rng: ChaCha8Rng,
}

impl<'a> Batches<'a> {
    pub fn new(ds: &'a Dataset, lp: &LoopConfig) -> Result<Self> {
        let policy = (lp.augment && ds.is_spatial()).then_some(AugmentPolicy { flip: true, pad: lp.crop_pad });
        Ok(Self {
            ds,
            sampler: BatchSampler::new(ds.len(), lp.batch_size, lp.seed)?,
            policy,
            rng: rng_stream(lp.seed, STREAM_AUGMENT),
        })
    }

    pub fn next_batch(&mut self) -> Result<BatchRecord> {
        let batch = self.ds.batch(&self.sampler.next_indices())?;
        match &self.policy {
            Some(p) => augment(&batch, p, &mut self.rng),
            None => Ok(batch),
        }
    }
}
