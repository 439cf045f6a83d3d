use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::losses::RegularizerKind;
use crate::nn::DEFAULT_DISCRIMINATOR;

/// Settings shared by every training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub batch_size: usize,
    pub steps: usize,
    /// Steps between evaluations; `None` evaluates every tenth of the run.
    pub eval_every: Option<usize>,
    /// Random flip and crop on spatial inputs. Flat inputs are never augmented.
    pub augment: bool,
    pub crop_pad: usize,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self { batch_size: 128, steps: 2000, eval_every: None, augment: true, crop_pad: 4, seed: 0 }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return config_err("batch_size must be positive");
        }
        if self.eval_every == Some(0) {
            return config_err("eval_every must be positive");
        }
        Ok(())
    }

    pub fn eval_interval(&self) -> usize {
        self.eval_every.unwrap_or((self.steps / 10).max(1))
    }
}

/// What the discriminator looks at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DInput {
    /// Tapped intermediate features. A wider feature vector is averaged in
    /// equal groups down to the narrower width.
    #[default]
    Features,
    Logits,
}

/// Adversarial compression settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionConfig {
    /// Weight of the logit L2 term.
    pub lambda: f64,
    /// Weight of the L1/L2 discriminator regularizers.
    pub mu: f64,
    pub regularizer: RegularizerKind,
    pub d_input: DInput,
    /// Dropout on the student's discriminator input during the student update.
    pub dropout_rate: f64,
    pub d_hidden: Vec<usize>,
    /// Discriminator updates per student update.
    pub d_steps: usize,
    /// Apply dropout to the adversarial sample inside the discriminator update too.
    pub adv_sample_dropout: bool,
    /// Check phase isolation and teacher freezing on every step.
    pub verify_invariants: bool,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 0.99,
            regularizer: RegularizerKind::AdversarialSamples,
            d_input: DInput::Features,
            dropout_rate: 0.5,
            d_hidden: DEFAULT_DISCRIMINATOR.to_vec(),
            d_steps: 1,
            adv_sample_dropout: true,
            verify_invariants: false,
        }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return config_err(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return config_err(format!("mu must be finite and non-negative, got {}", self.mu));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return config_err(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.d_hidden.is_empty() || self.d_hidden.contains(&0) {
            return config_err("d_hidden needs at least one positive layer width");
        }
        if self.d_steps == 0 {
            return config_err("d_steps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Cross-entropy on the labels.
    #[default]
    Supervised,
    /// Logit L2 regression onto the teacher.
    L2Logits,
    /// Soft-target distillation at `temperature`.
    Kd,
}

impl BaselineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Supervised => "supervised",
            Self::L2Logits => "l2_logits",
            Self::Kd => "kd",
        }
    }

    pub fn needs_teacher(&self) -> bool {
        !matches!(self, Self::Supervised)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub temperature: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { kind: BaselineKind::Supervised, temperature: 4.0 }
    }
}
