//! Teacher, student and discriminator networks.

mod checkpoint;
mod network;
mod spec;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{Forward, InitPolicy, Network, Prediction};
pub use spec::{
    make_discriminator, preset, student_cnn, student_mlp, teacher_cnn, teacher_mlp, LayerSpec, NetworkSpec,
    DEFAULT_DISCRIMINATOR, PRESETS,
};
