//! Scalar losses over tape values.
//!
//! Expectations are minibatch means. Discriminator probabilities are clamped
//! to `[PROB_CLAMP, 1 − PROB_CLAMP]` before any log so a saturated
//! discriminator still yields finite losses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;

/// Values of every loss term of one compression step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Adversarial objective on true labels, as maximised by the discriminator.
    pub adv_d: f64,
    /// Student-side adversarial loss with inverted labels.
    pub adv_student: f64,
    /// Mean squared L2 distance between teacher and student logits.
    pub data: f64,
    /// Discriminator regularizer, as added to its maximisation objective.
    pub regul: f64,
    /// Loss minimised by the discriminator, `−(adv_d + regul)`.
    pub d_total: f64,
    /// Loss minimised by the student, `adv_student + λ·data`.
    pub student_total: f64,
}

impl LossBreakdown {
    pub fn all_finite(&self) -> bool {
        [self.adv_d, self.adv_student, self.data, self.regul, self.d_total, self.student_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn check_probs(v: &Var<'_>, name: &str) -> Result<()> {
    let bad = v.with_values(|d| d.iter().copied().find(|p| !(0.0..=1.0).contains(p)));
    match bad {
        Some(p) => Err(Error::Contract(format!("{name}: discriminator output {p} outside (0, 1)"))),
        None => Ok(()),
    }
}

fn clamp_prob<'t>(v: &Var<'t>) -> Var<'t> {
    v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `mean log D(teacher) + mean log(1 − D(student))`. The discriminator
/// maximises this value.
pub fn adv_loss<'t>(d_teacher: Var<'t>, d_student: Var<'t>) -> Result<Var<'t>> {
    check_probs(&d_teacher, "adv_loss")?;
    check_probs(&d_student, "adv_loss")?;
    let real = clamp_prob(&d_teacher).log().mean();
    let fake = clamp_prob(&d_student).neg().add_scalar(1.0).log().mean();
    real.add(fake)
}

/// `−mean log D(student)`: the student's loss when its samples are labelled
/// as teacher samples.
pub fn student_adv_loss(d_student: Var<'_>) -> Result<Var<'_>> {
    check_probs(&d_student, "student_adv_loss")?;
    Ok(clamp_prob(&d_student).log().mean().neg())
}

/// Batch mean of `‖teacher − student‖²` over logit rows. The teacher side is
/// detached.
pub fn data_loss<'t>(teacher_logits: Var<'t>, student_logits: Var<'t>) -> Result<Var<'t>> {
    let (ts, ss) = (teacher_logits.shape(), student_logits.shape());
    if ts != ss {
        return dim_err(format!("data_loss: teacher logits {ts:?} vs student logits {ss:?}"));
    }
    let diff = student_logits.sub(teacher_logits.detach())?;
    Ok(diff.mul(diff)?.sum().scale(1.0 / ts[0] as f64))
}

/// Discriminator regularizer choice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    None,
    L1,
    L2,
    /// Student samples shown to the discriminator labelled as teacher.
    #[default]
    AdversarialSamples,
}

impl RegularizerKind {
    pub const ALL: [RegularizerKind; 4] = [Self::None, Self::L1, Self::L2, Self::AdversarialSamples];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::L1 => "l1",
            Self::L2 => "l2",
            Self::AdversarialSamples => "adversarial_samples",
        }
    }
}

impl fmt::Display for RegularizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "adversarial_samples" => Ok(Self::AdversarialSamples),
            other => config_err(format!("unknown regularizer {other:?}")),
        }
    }
}

/// Regularizer term added to the discriminator's maximisation objective:
///
/// - `l2`: `−μ Σ w²` over all discriminator parameters,
/// - `l1`: `−μ Σ |w|`,
/// - `adversarial_samples`: `mean log D(student)` on the adversarial sample,
/// - `none`: 0.
pub fn d_regularizer<'t>(
    tape: &'t Tape,
    kind: RegularizerKind,
    d_params: &[Var<'t>],
    d_on_student: Option<Var<'t>>,
    mu: f64,
) -> Result<Var<'t>> {
    let zero = || tape.constant(&Tensor::scalar(0.0));
    match kind {
        RegularizerKind::None => Ok(zero()),
        RegularizerKind::L1 | RegularizerKind::L2 => {
            if !(mu >= 0.0) {
                return config_err(format!("regularizer weight mu must be non-negative, got {mu}"));
            }
            let mut total = zero();
            for p in d_params {
                let term = if kind == RegularizerKind::L2 { p.mul(*p)?.sum() } else { p.abs().sum() };
                total = total.add(term)?;
            }
            Ok(total.scale(-mu))
        }
        RegularizerKind::AdversarialSamples => {
            let d = d_on_student.ok_or_else(|| {
                Error::Contract("adversarial_samples regularizer needs D(student) values".into())
            })?;
            check_probs(&d, "d_regularizer")?;
            Ok(clamp_prob(&d).log().mean())
        }
    }
}

/// Soft-target distillation: cross-entropy between temperature-softened
/// teacher and student distributions, scaled by `T²`. The teacher is detached.
pub fn kd_loss<'t>(teacher_logits: Var<'t>, student_logits: Var<'t>, temperature: f64) -> Result<Var<'t>> {
    if !(temperature > 0.0) {
        return config_err(format!("kd temperature must be positive, got {temperature}"));
    }
    let (ts, ss) = (teacher_logits.shape(), student_logits.shape());
    if ts != ss {
        return dim_err(format!("kd_loss: teacher logits {ts:?} vs student logits {ss:?}"));
    }
    let soft = teacher_logits.detach().softmax(temperature)?;
    let log_q = student_logits.log_softmax(temperature)?;
    let n = ts[0] as f64;
    Ok(soft.mul(log_q)?.sum().scale(-temperature * temperature / n))
}

/// Mean negative log-likelihood of the true class under softmax.
pub fn ce_loss<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return dim_err(format!("ce_loss: logits {shape:?} for {} labels", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= shape[1]) {
        return Err(Error::Data(format!("label {bad} outside 0..{}", shape[1])));
    }
    Ok(logits.log_softmax(1.0)?.gather(labels)?.mean().neg())
}
