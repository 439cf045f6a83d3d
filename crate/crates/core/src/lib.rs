//! Adversarial network compression.
//!
//! A small *student* network is trained to mimic a pre-trained *teacher*
//! without labels: a discriminator learns to tell teacher features from
//! student features, the student learns to fool it, and an L2 term on the
//! logits pulls the student outputs onto the teacher's. The crate ships the
//! whole stack needed to run this at desk scale on a CPU:
//!
//! - [`tape`]: a reverse-mode autodiff tape over `f64` tensors,
//! - [`nn`]: declarative networks with feature taps, parameter and FLOP counts,
//! - [`losses`]: adversarial, data, regularizer and baseline distillation losses,
//! - [`train`]: optimizers and the teacher / compression / baseline loops,
//! - [`data`]: synthetic blobs, IDX files, normalization and augmentation,
//! - [`experiment`]: config-driven commands behind the `advdistill` binary.

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod nn;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Mode, Tape, Var};
pub use tensor::Tensor;
