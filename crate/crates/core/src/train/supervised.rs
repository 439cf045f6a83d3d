use crate::data::Dataset;
use crate::error::{config_err, dim_err, Error, Result};
use crate::losses::{ce_loss, data_loss, kd_loss};
use crate::nn::{InitPolicy, Network, NetworkSpec};
use crate::tape::{Mode, Tape};

use super::metrics::{MetricsRow, RunMetrics, Window};
use super::{
    check_finite, check_input, error_rate, rng_stream, Batches, BaselineConfig, BaselineKind, LoopConfig,
    OptimizerConfig, OptimizerState, STREAM_DROPOUT, STREAM_INIT,
};

/// A trained network and its metrics.
#[derive(Debug, Clone)]
pub struct Trained {
    pub network: Network,
    pub metrics: RunMetrics,
}

/// Cross-entropy training from scratch.
pub fn train_teacher(
    spec: NetworkSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    opt: &OptimizerConfig,
    lp: &LoopConfig,
) -> Result<Trained> {
    run_baseline(&BaselineConfig::default(), None, spec, train, test, opt, lp)
}

/// Trains a fresh network built from `spec`: on the labels (`supervised`),
/// or onto a frozen teacher's logits (`l2_logits`, `kd`), which never
/// reads the labels.
pub fn run_baseline(
    cfg: &BaselineConfig,
    teacher: Option<&Network>,
    spec: NetworkSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    opt: &OptimizerConfig,
    lp: &LoopConfig,
) -> Result<Trained> {
    lp.validate()?;
    let teacher = match (cfg.kind.needs_teacher(), teacher) {
        (true, None) => return config_err(format!("{} baseline needs a teacher", cfg.kind.as_str())),
        (true, Some(t)) => {
            check_input(t, train)?;
            if t.spec().output_shape()? != spec.output_shape()? {
                return dim_err(format!(
                    "teacher outputs {:?} but {} outputs {:?}",
                    t.spec().output_shape()?,
                    spec.name,
                    spec.output_shape()?
                ));
            }
            let mut t = t.clone();
            t.freeze();
            Some(t)
        }
        (false, _) => None,
    };
    let mut init = rng_stream(lp.seed, STREAM_INIT);
    let mut net = Network::build(spec, InitPolicy::GlorotUniform, &mut init)?;
    check_input(&net, train)?;
    let mut optim = OptimizerState::new(opt.clone(), net.params(), lp.steps)?;
    let mut batches = Batches::new(train, lp)?;
    let mut dropout = rng_stream(lp.seed, STREAM_DROPOUT);
    let interval = lp.eval_interval();
    let mut window = Window::default();
    let mut metrics = RunMetrics { steps: lp.steps, ..Default::default() };

    for step in 0..lp.steps {
        let batch = batches.next_batch()?;
        let lr = optim.current_lr();
        let tape = Tape::new();
        let (params, out) = net.forward(&tape, &batch.inputs, Mode::Train, &mut dropout)?;
        let loss = match (cfg.kind, &teacher) {
            (BaselineKind::Supervised, _) => ce_loss(out.logits, &batch.labels)?,
            (BaselineKind::L2Logits, Some(t)) => data_loss(tape.constant(&t.predict(&batch.inputs)?.logits), out.logits)?,
            (BaselineKind::Kd, Some(t)) => {
                kd_loss(tape.constant(&t.predict(&batch.inputs)?.logits), out.logits, cfg.temperature)?
            }
            _ => unreachable!("teacher presence checked above"),
        };
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::Divergence { step, what: format!("{} loss is {value}", cfg.kind.as_str()) });
        }
        tape.backward(loss)?;
        let grads = net.gradients(&params);
        drop(tape);
        optim.step(net.params_mut(), &grads)?;
        check_finite(&net, step)?;
        window.push([value, 0.0, 0.0, 0.0]);

        let done = step + 1;
        if done % interval == 0 || done == lp.steps {
            let mean = window.take().unwrap_or_default();
            metrics.rows.push(MetricsRow {
                step: done,
                lr,
                adv_d: None,
                adv_student: None,
                data_loss: (cfg.kind == BaselineKind::L2Logits).then_some(mean[0]),
                regul: None,
                d_accuracy: None,
                train_err: error_rate(&net, train)?,
                test_err: test.map(|t| error_rate(&net, t)).transpose()?,
            });
        }
    }
    metrics.final_train_err = match metrics.rows.last() {
        Some(r) => r.train_err,
        None => error_rate(&net, train)?,
    };
    metrics.final_test_err = match (metrics.rows.last(), test) {
        (Some(r), _) => r.test_err,
        (None, Some(t)) => Some(error_rate(&net, t)?),
        (None, None) => None,
    };
    Ok(Trained { network: net, metrics })
}
