use rand::Rng;

use crate::data::{BatchRecord, Dataset};
use crate::error::{config_err, dim_err, Error, Result};
use crate::losses::{adv_loss, d_regularizer, data_loss, student_adv_loss, LossBreakdown, RegularizerKind};
use crate::nn::{make_discriminator, InitPolicy, Network, NetworkSpec, Prediction};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;

use super::metrics::{MetricsRow, RunMetrics, Window};
use super::{
    check_finite, check_input, error_rate, predict_all, rng_stream, Batches, CompressionConfig, DInput, LoopConfig,
    OptimizerConfig, OptimizerState, STREAM_DROPOUT, STREAM_D_INIT, STREAM_INIT,
};

/// Dropout modes actually used in one compression step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeTrace {
    /// Student sample scored under its true label in the discriminator update.
    pub d_true_sample: Mode,
    /// Adversarial sample in the discriminator update, when the regularizer uses one.
    pub d_adversarial_sample: Option<Mode>,
    /// Student forward and discriminator input during the student update.
    pub student_phase: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DPhaseReport {
    pub adv_d: f64,
    pub regul: f64,
    pub d_total: f64,
    /// Batch accuracy of the discriminator before its update.
    pub d_accuracy: f64,
    pub true_sample_mode: Mode,
    pub adversarial_sample_mode: Option<Mode>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentPhaseReport {
    pub adv_student: f64,
    pub data: f64,
    pub total: f64,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub losses: LossBreakdown,
    pub d_accuracy: f64,
    pub trace: ModeTrace,
}

/// Output of [`run_compression`].
#[derive(Debug, Clone)]
pub struct Compressed {
    pub student: Network,
    pub discriminator: Network,
    pub metrics: RunMetrics,
}

fn flat_width(shape: &[usize]) -> usize {
    shape[1..].iter().product()
}

/// Width of the discriminator input for this teacher/student pair.
pub fn d_input_width(teacher: &NetworkSpec, student: &NetworkSpec, d_input: DInput) -> Result<usize> {
    let (t, s) = match d_input {
        DInput::Features => (teacher.feature_shape()?, student.feature_shape()?),
        DInput::Logits => (teacher.output_shape()?, student.output_shape()?),
    };
    let (t, s): (usize, usize) = (t.iter().product(), s.iter().product());
    let (wide, narrow) = (t.max(s), t.min(s));
    if wide % narrow != 0 {
        return config_err(format!(
            "{} and {} {:?} widths {t} and {s} cannot be aligned: the larger must be a multiple of the smaller",
            teacher.name, student.name, d_input
        ));
    }
    Ok(narrow)
}

/// Flattens `v` to `[N, D]` and averages column groups down to `width`.
fn align<'t>(v: Var<'t>, width: usize) -> Result<Var<'t>> {
    let v = if v.shape().len() == 2 { v } else { v.flatten()? };
    if flat_width(&v.shape()) == width {
        Ok(v)
    } else {
        v.group_mean(width)
    }
}

fn teacher_signal(teacher: &Prediction, d_input: DInput) -> &Tensor {
    match d_input {
        DInput::Features => &teacher.feature,
        DInput::Logits => &teacher.logits,
    }
}

fn student_signal<'t>(out: &crate::nn::Forward<'t>, d_input: DInput) -> Var<'t> {
    match d_input {
        DInput::Features => out.feature,
        DInput::Logits => out.logits,
    }
}

fn d_score<'t, R: Rng + ?Sized>(disc: &Network, params: &[Var<'t>], x: Var<'t>, rng: &mut R) -> Result<Var<'t>> {
    Ok(disc.forward_with(params, x, Mode::Eval, rng)?.logits)
}

fn batch_accuracy(d_teacher: &Var<'_>, d_student: &Var<'_>) -> f64 {
    let hits = d_teacher.with_values(|v| v.iter().filter(|&&p| p > 0.5).count())
        + d_student.with_values(|v| v.iter().filter(|&&p| p < 0.5).count());
    hits as f64 / (d_teacher.numel() + d_student.numel()) as f64
}

fn require_frozen(teacher: &Network) -> Result<()> {
    if teacher.is_frozen() {
        Ok(())
    } else {
        Err(Error::Contract(format!("teacher {} must be frozen during compression", teacher.spec().name)))
    }
}

/// Discriminator update: maximise the adversarial objective on teacher
/// (label 1) and eval-mode student (label 0) samples plus the configured
/// regularizer. Only `disc` changes.
pub fn d_phase<R: Rng + ?Sized>(
    teacher: &Network,
    student: &Network,
    disc: &mut Network,
    opt_d: &mut OptimizerState,
    inputs: &Tensor,
    cfg: &CompressionConfig,
    rng: &mut R,
) -> Result<DPhaseReport> {
    require_frozen(teacher)?;
    let width = d_input_width(teacher.spec(), student.spec(), cfg.d_input)?;
    let t_pred = teacher.predict(inputs)?;
    let tape = Tape::new();
    let s_params = student.bind_constant(&tape);
    let true_mode = Mode::Eval;
    let s_out = student.forward_with(&s_params, tape.constant(inputs), true_mode, rng)?;
    let t_in = align(tape.constant(teacher_signal(&t_pred, cfg.d_input)), width)?;
    let s_in = align(student_signal(&s_out, cfg.d_input), width)?;

    let d_params = disc.bind(&tape);
    let d_t = d_score(disc, &d_params, t_in, rng)?;
    let d_s = d_score(disc, &d_params, s_in, rng)?;
    let d_accuracy = batch_accuracy(&d_t, &d_s);
    let adv = adv_loss(d_t, d_s)?;
    let (adv_mode, d_adv) = if cfg.regularizer == RegularizerKind::AdversarialSamples {
        let mode = if cfg.adv_sample_dropout { Mode::Train } else { Mode::Eval };
        let sample = s_in.dropout(cfg.dropout_rate, mode, rng)?;
        (Some(mode), Some(d_score(disc, &d_params, sample, rng)?))
    } else {
        (None, None)
    };
    let regul = d_regularizer(&tape, cfg.regularizer, &d_params, d_adv, cfg.mu)?;
    let total = adv.add(regul)?.neg();
    let report = DPhaseReport {
        adv_d: adv.item(),
        regul: regul.item(),
        d_total: total.item(),
        d_accuracy,
        true_sample_mode: true_mode,
        adversarial_sample_mode: adv_mode,
    };
    if !report.d_total.is_finite() {
        return Err(Error::Divergence { step: opt_d.step_count(), what: format!("discriminator loss is {}", report.d_total) });
    }
    tape.backward(total)?;
    let grads = disc.gradients(&d_params);
    drop(tape);
    opt_d.step(disc.params_mut(), &grads)?;
    Ok(report)
}

/// Student update: train-mode student, dropout on its discriminator input,
/// minimise `−mean log D(student) + λ·data`. Only `student` changes.
pub fn student_phase<R: Rng + ?Sized>(
    teacher: &Network,
    student: &mut Network,
    disc: &Network,
    opt_s: &mut OptimizerState,
    inputs: &Tensor,
    cfg: &CompressionConfig,
    rng: &mut R,
) -> Result<StudentPhaseReport> {
    require_frozen(teacher)?;
    let width = d_input_width(teacher.spec(), student.spec(), cfg.d_input)?;
    let t_pred = teacher.predict(inputs)?;
    let tape = Tape::new();
    let mode = Mode::Train;
    let (s_params, s_out) = student.forward(&tape, inputs, mode, rng)?;
    let s_in = align(student_signal(&s_out, cfg.d_input), width)?.dropout(cfg.dropout_rate, mode, rng)?;
    let d_params = disc.bind_constant(&tape);
    let d_s = d_score(disc, &d_params, s_in, rng)?;
    let adv = student_adv_loss(d_s)?;
    let data = data_loss(tape.constant(&t_pred.logits), s_out.logits)?;
    let total = adv.add(data.scale(cfg.lambda))?;
    let report = StudentPhaseReport { adv_student: adv.item(), data: data.item(), total: total.item(), mode };
    if !report.total.is_finite() {
        return Err(Error::Divergence { step: opt_s.step_count(), what: format!("student loss is {}", report.total) });
    }
    tape.backward(total)?;
    let grads = student.gradients(&s_params);
    drop(tape);
    opt_s.step(student.params_mut(), &grads)?;
    Ok(report)
}

fn same_params(a: &[Tensor], b: &[Tensor]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

/// One compression step: `cfg.d_steps` discriminator updates, then one
/// student update, all on `batch`. Labels are ignored.
#[allow(clippy::too_many_arguments)]
pub fn compress_step<R: Rng + ?Sized>(
    teacher: &Network,
    student: &mut Network,
    disc: &mut Network,
    batch: &BatchRecord,
    cfg: &CompressionConfig,
    opt_s: &mut OptimizerState,
    opt_d: &mut OptimizerState,
    rng: &mut R,
) -> Result<StepReport> {
    require_frozen(teacher)?;
    let snapshot = cfg.verify_invariants.then(|| (teacher.params().to_vec(), student.params().to_vec()));
    let mut d = None;
    for _ in 0..cfg.d_steps {
        d = Some(d_phase(teacher, student, disc, opt_d, &batch.inputs, cfg, rng)?);
    }
    let d = d.expect("d_steps is positive");
    let d_snapshot = match &snapshot {
        Some((t, s)) => {
            if !same_params(t, teacher.params()) || !same_params(s, student.params()) {
                return Err(Error::Contract("discriminator update touched teacher or student parameters".into()));
            }
            Some(disc.params().to_vec())
        }
        None => None,
    };
    let s = student_phase(teacher, student, disc, opt_s, &batch.inputs, cfg, rng)?;
    if let (Some((t, _)), Some(dp)) = (&snapshot, &d_snapshot) {
        if !same_params(t, teacher.params()) || !same_params(dp, disc.params()) {
            return Err(Error::Contract("student update touched teacher or discriminator parameters".into()));
        }
        if d.true_sample_mode != Mode::Eval || s.mode != Mode::Train {
            return Err(Error::Contract("dropout must be active only in the student update".into()));
        }
    }
    Ok(StepReport {
        losses: LossBreakdown {
            adv_d: d.adv_d,
            adv_student: s.adv_student,
            data: s.data,
            regul: d.regul,
            d_total: d.d_total,
            student_total: s.total,
        },
        d_accuracy: d.d_accuracy,
        trace: ModeTrace {
            d_true_sample: d.true_sample_mode,
            d_adversarial_sample: d.adversarial_sample_mode,
            student_phase: s.mode,
        },
    })
}

/// Discriminator accuracy on eval-mode teacher and student signals for
/// every sample of `ds`.
pub fn d_accuracy_on(
    teacher: &Network,
    student: &Network,
    disc: &Network,
    ds: &Dataset,
    d_input: DInput,
) -> Result<f64> {
    let width = d_input_width(teacher.spec(), student.spec(), d_input)?;
    let (t, s) = (predict_all(teacher, ds.inputs())?, predict_all(student, ds.inputs())?);
    let tape = Tape::new();
    let mut rng = rng_stream(0, 0);
    let d_params = disc.bind_constant(&tape);
    let t_in = align(tape.constant(teacher_signal(&t, d_input)), width)?;
    let s_in = align(tape.constant(teacher_signal(&s, d_input)), width)?;
    let d_t = d_score(disc, &d_params, t_in, &mut rng)?;
    let d_s = d_score(disc, &d_params, s_in, &mut rng)?;
    Ok(batch_accuracy(&d_t, &d_s))
}

/// Full label-free compression of `teacher` into a fresh `student_spec`
/// network. Labels are read only to report errors.
pub fn run_compression(
    teacher: &Network,
    student_spec: NetworkSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    opt: &OptimizerConfig,
    lp: &LoopConfig,
    cfg: &CompressionConfig,
) -> Result<Compressed> {
    lp.validate()?;
    cfg.validate()?;
    check_input(teacher, train)?;
    let mut frozen = teacher.clone();
    frozen.freeze();
    let teacher = &frozen;
    if teacher.spec().output_shape()? != student_spec.output_shape()? {
        return dim_err(format!(
            "teacher outputs {:?} but {} outputs {:?}",
            teacher.spec().output_shape()?,
            student_spec.name,
            student_spec.output_shape()?
        ));
    }
    let width = d_input_width(teacher.spec(), &student_spec, cfg.d_input)?;
    let mut student = Network::build(student_spec, InitPolicy::GlorotUniform, &mut rng_stream(lp.seed, STREAM_INIT))?;
    check_input(&student, train)?;
    let d_spec = make_discriminator(width, &cfg.d_hidden)?;
    let mut disc = Network::build(d_spec, InitPolicy::GlorotUniform, &mut rng_stream(lp.seed, STREAM_D_INIT))?;
    let mut opt_s = OptimizerState::new(opt.clone(), student.params(), lp.steps)?;
    let mut opt_d = OptimizerState::new(opt.clone(), disc.params(), lp.steps * cfg.d_steps)?;
    let mut batches = Batches::new(train, lp)?;
    let mut rng = rng_stream(lp.seed, STREAM_DROPOUT);
    let interval = lp.eval_interval();
    let mut window = Window::default();
    let mut metrics = RunMetrics { steps: lp.steps, ..Default::default() };
    let held_out = test.unwrap_or(train);

    for step in 0..lp.steps {
        let batch = batches.next_batch()?;
        let lr = opt_s.current_lr();
        let report = compress_step(teacher, &mut student, &mut disc, &batch, cfg, &mut opt_s, &mut opt_d, &mut rng)
            .map_err(|e| match e {
                Error::Divergence { what, .. } => Error::Divergence { step, what },
                other => other,
            })?;
        check_finite(&student, step)?;
        check_finite(&disc, step)?;
        let l = report.losses;
        window.push([l.adv_d, l.adv_student, l.data, l.regul]);

        let done = step + 1;
        if done % interval == 0 || done == lp.steps {
            let [adv_d, adv_student, data, regul] = window.take().unwrap_or_default();
            metrics.rows.push(MetricsRow {
                step: done,
                lr,
                adv_d: Some(adv_d),
                adv_student: Some(adv_student),
                data_loss: Some(data),
                regul: Some(regul),
                d_accuracy: Some(d_accuracy_on(teacher, &student, &disc, held_out, cfg.d_input)?),
                train_err: error_rate(&student, train)?,
                test_err: test.map(|t| error_rate(&student, t)).transpose()?,
            });
        }
    }
    metrics.final_train_err = match metrics.rows.last() {
        Some(r) => r.train_err,
        None => error_rate(&student, train)?,
    };
    metrics.final_test_err = match (metrics.rows.last(), test) {
        (Some(r), _) => r.test_err,
        (None, Some(t)) => Some(error_rate(&student, t)?),
        (None, None) => None,
    };
    Ok(Compressed { student, discriminator: disc, metrics })
}
