//! Central finite-difference checks of tape gradients.
//!
//! [`check_gradients`] compares the reverse-mode gradient of a scalar
//! function with `(f(x + h) − f(x − h)) / 2h` for every input element.
//! [`oracle_suite`] runs it over randomized operator instances and random
//! small networks; the `gradcheck` command prints its report.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{adv_loss, ce_loss, d_regularizer, data_loss, kd_loss, student_adv_loss, RegularizerKind};
use crate::nn::{make_discriminator, InitPolicy, LayerSpec, Network, NetworkSpec};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;
/// Largest relative error the suite accepts.
pub const SUITE_TOLERANCE: f64 = 1e-4;
/// Rounds of operator instances run by the `gradcheck` command.
pub const SUITE_ROUNDS: usize = 4;
/// Random networks checked by the `gradcheck` command.
pub const SUITE_NETWORKS: usize = 24;

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(input, element)` with the largest relative error.
    pub worst: Option<(usize, usize)>,
}

impl GradReport {
    fn merge(&mut self, other: &GradReport) {
        self.checked += other.checked;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

/// Central-difference gradient of `f` with respect to element `j` of
/// input `i`, for every element.
pub fn numerical_grad<F>(f: &F, inputs: &[Tensor], i: usize, step: f64) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x)).collect();
        Ok(f(&tape, &vars)?.item())
    };
    let mut xs = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs[i].len());
    for j in 0..inputs[i].len() {
        let orig = xs[i].data()[j];
        xs[i].data_mut()[j] = orig + step;
        let up = eval(&xs)?;
        xs[i].data_mut()[j] = orig - step;
        let down = eval(&xs)?;
        xs[i].data_mut()[j] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

/// Compares tape gradients of the scalar `f` with central differences for
/// every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.param(x)).collect();
    tape.backward(f(&tape, &vars)?)?;
    let mut report = GradReport::default();
    for (i, v) in vars.iter().enumerate() {
        let analytic = v.grad().unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        let numeric = numerical_grad(&f, inputs, i, FD_STEP)?;
        for (j, (&a, &n)) in analytic.data().iter().zip(&numeric).enumerate() {
            let r = rel_err(a, n);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max((a - n).abs());
            if r > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(r);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Fixed projection weights so a tensor-valued output becomes a scalar with
/// a non-trivial gradient.
fn project<'t>(tape: &'t Tape, v: Var<'t>) -> Result<Var<'t>> {
    let n = v.numel();
    let w: Vec<f64> = (0..n).map(|k| (k as f64 * 0.754_877 + 0.3).sin() + 0.5).collect();
    let w = tape.constant(&Tensor::new(v.shape(), w)?);
    Ok(v.mul(w)?.sum())
}

type Scalar = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

struct Instance {
    name: String,
    inputs: Vec<Tensor>,
    f: Scalar,
}

fn inst<F>(name: impl Into<String>, inputs: Vec<Tensor>, f: F) -> Instance
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + 'static,
{
    Instance { name: name.into(), inputs, f: Box::new(f) }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("positive dims")
}

/// Values in `(−1.5, 1.5)` at least `gap` away from `±at`.
fn away_from(rng: &mut ChaCha8Rng, shape: &[usize], at: f64, gap: f64) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.5..1.5);
            if (v.abs() - at).abs() >= gap {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).expect("positive dims")
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<Instance> {
    let (m, k, n) = (dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 5));
    let (b, c, h, w) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 2, 6), dim(rng, 2, 6));
    let mn = [m, n];
    let t = rng.random_range(0.5..3.0);
    let s = rng.random_range(-2.0..2.0);
    let dropout_seed: u64 = rng.random();
    let rate = rng.random_range(0.1..0.7);
    let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
    let groups = dim(rng, 1, 3);
    let mu = rng.random_range(0.1..1.5);
    let (f, kk) = (dim(rng, 1, 3), dim(rng, 1, 3.min(h).min(w)));
    let (stride, pad) = (dim(rng, 1, 2), dim(rng, 0, 1));
    let labels2 = labels.clone();
    // Distillation losses detach the teacher; only student logits are inputs.
    let teacher = uniform(rng, &mn, -2.0, 2.0);
    let teacher2 = teacher.clone();

    vec![
        inst("matmul", vec![uniform(rng, &[m, k], -1.0, 1.0), uniform(rng, &[k, n], -1.0, 1.0)], |t, v| {
            project(t, v[0].matmul(v[1])?)
        }),
        inst("add_row", vec![uniform(rng, &mn, -1.0, 1.0), uniform(rng, &[n], -1.0, 1.0)], |t, v| {
            project(t, v[0].add_row(v[1])?)
        }),
        inst("add_channel", vec![uniform(rng, &[b, c, h, w], -1.0, 1.0), uniform(rng, &[c], -1.0, 1.0)], |t, v| {
            project(t, v[0].add_channel(v[1])?)
        }),
        inst("add", vec![uniform(rng, &mn, -1.0, 1.0), uniform(rng, &mn, -1.0, 1.0)], |t, v| project(t, v[0].add(v[1])?)),
        inst("sub", vec![uniform(rng, &mn, -1.0, 1.0), uniform(rng, &mn, -1.0, 1.0)], |t, v| project(t, v[0].sub(v[1])?)),
        inst("mul", vec![uniform(rng, &mn, -1.0, 1.0), uniform(rng, &mn, -1.0, 1.0)], |t, v| project(t, v[0].mul(v[1])?)),
        inst("mul_self", vec![uniform(rng, &mn, -1.0, 1.0)], |t, v| project(t, v[0].mul(v[0])?)),
        inst("scale", vec![uniform(rng, &mn, -1.0, 1.0)], move |t, v| project(t, v[0].scale(s))),
        inst("add_scalar", vec![uniform(rng, &mn, -1.0, 1.0)], move |t, v| project(t, v[0].add_scalar(s))),
        inst("neg", vec![uniform(rng, &mn, -1.0, 1.0)], |t, v| project(t, v[0].neg())),
        inst("relu", vec![away_from(rng, &mn, 0.0, 1e-2)], |t, v| project(t, v[0].relu())),
        inst("sigmoid", vec![uniform(rng, &mn, -4.0, 4.0)], |t, v| project(t, v[0].sigmoid())),
        inst("log", vec![uniform(rng, &mn, 0.5, 2.0)], |t, v| project(t, v[0].log())),
        inst("abs", vec![away_from(rng, &mn, 0.0, 1e-2)], |t, v| project(t, v[0].abs())),
        inst("clamp", vec![away_from(rng, &mn, 0.5, 1e-2)], |t, v| project(t, v[0].clamp(-0.5, 0.5))),
        inst("softmax", vec![uniform(rng, &mn, -3.0, 3.0)], move |tp, v| project(tp, v[0].softmax(t)?)),
        inst("log_softmax", vec![uniform(rng, &mn, -3.0, 3.0)], move |tp, v| project(tp, v[0].log_softmax(t)?)),
        inst("sum", vec![uniform(rng, &mn, -1.0, 1.0)], |_, v| Ok(v[0].sum())),
        inst("mean", vec![uniform(rng, &mn, -1.0, 1.0)], |_, v| Ok(v[0].mean())),
        inst("reshape", vec![uniform(rng, &[b, c, h, w], -1.0, 1.0)], |t, v| project(t, v[0].flatten()?)),
        inst(
            format!("conv2d k{kk} s{stride} p{pad}"),
            vec![uniform(rng, &[b, c, h, w], -1.0, 1.0), uniform(rng, &[f, c, kk, kk], -1.0, 1.0)],
            move |t, v| project(t, v[0].conv2d(v[1], stride, pad)?),
        ),
        inst("avg_pool", vec![uniform(rng, &[b, c, h, w], -1.0, 1.0)], |t, v| project(t, v[0].avg_pool()?)),
        inst("dropout", vec![uniform(rng, &mn, -1.0, 1.0)], move |t, v| {
            let mut r = ChaCha8Rng::seed_from_u64(dropout_seed);
            project(t, v[0].dropout(rate, Mode::Train, &mut r)?)
        }),
        inst("gather", vec![uniform(rng, &mn, -1.0, 1.0)], move |t, v| project(t, v[0].gather(&labels)?)),
        inst("group_mean", vec![uniform(rng, &[m, groups * k], -1.0, 1.0)], move |t, v| project(t, v[0].group_mean(groups)?)),
        inst("adv_loss", vec![uniform(rng, &[m, 1], 0.05, 0.95), uniform(rng, &[m, 1], 0.05, 0.95)], |_, v| adv_loss(v[0], v[1])),
        inst("student_adv_loss", vec![uniform(rng, &[m, 1], 0.05, 0.95)], |_, v| student_adv_loss(v[0])),
        inst("data_loss", vec![uniform(rng, &mn, -2.0, 2.0)], move |tp, v| data_loss(tp.constant(&teacher), v[0])),
        inst("kd_loss", vec![uniform(rng, &mn, -2.0, 2.0)], move |tp, v| kd_loss(tp.constant(&teacher2), v[0], t)),
        inst("ce_loss", vec![uniform(rng, &mn, -2.0, 2.0)], move |_, v| ce_loss(v[0], &labels2)),
        inst("l1_regularizer", vec![away_from(rng, &mn, 0.0, 1e-2), away_from(rng, &[n], 0.0, 1e-2)], move |t, v| {
            d_regularizer(t, RegularizerKind::L1, v, None, mu)
        }),
        inst("l2_regularizer", vec![uniform(rng, &mn, -1.0, 1.0), uniform(rng, &[n], -1.0, 1.0)], move |t, v| {
            d_regularizer(t, RegularizerKind::L2, v, None, mu)
        }),
        inst("adversarial_sample_regularizer", vec![uniform(rng, &[m, 1], 0.05, 0.95)], move |t, v| {
            d_regularizer(t, RegularizerKind::AdversarialSamples, &[], Some(v[0]), mu)
        }),
    ]
}

fn random_spec(rng: &mut ChaCha8Rng, index: usize) -> NetworkSpec {
    match index % 3 {
        0 => {
            let input = dim(rng, 1, 4);
            let mut layers = Vec::new();
            let mut prev = input;
            for _ in 0..dim(rng, 1, 3) {
                let width = dim(rng, 2, 6);
                layers.push(LayerSpec::dense(prev, width));
                layers.push(match rng.random_range(0..3) {
                    0 => LayerSpec::Relu,
                    1 => LayerSpec::Sigmoid,
                    _ => LayerSpec::Dropout { rate: 0.3 },
                });
                prev = width;
            }
            let tap = layers.len() - 1;
            layers.push(LayerSpec::dense(prev, dim(rng, 2, 4)));
            NetworkSpec::new(format!("mlp-{index}"), vec![input], layers, Some(tap))
        }
        1 => {
            let (c, h, w) = (dim(rng, 1, 2), dim(rng, 3, 6), dim(rng, 3, 6));
            let f = dim(rng, 1, 3);
            let k = dim(rng, 1, 3);
            let (stride, pad) = (dim(rng, 1, 2), dim(rng, 0, 1));
            let pool = rng.random_bool(0.5);
            let oh = (h + 2 * pad - k) / stride + 1;
            let ow = (w + 2 * pad - k) / stride + 1;
            let mut layers = vec![LayerSpec::conv(c, f, k, stride, pad), LayerSpec::Sigmoid];
            let flat = if pool {
                layers.push(LayerSpec::AvgPool);
                f
            } else {
                layers.push(LayerSpec::Flatten);
                f * oh * ow
            };
            layers.push(LayerSpec::dense(flat, dim(rng, 2, 3)));
            NetworkSpec::new(format!("cnn-{index}"), vec![c, h, w], layers, Some(2))
        }
        _ => {
            let hidden: Vec<usize> = (0..dim(rng, 1, 2)).map(|_| dim(rng, 2, 5)).collect();
            make_discriminator(dim(rng, 1, 4), &hidden).expect("valid widths")
        }
    }
}

fn network_instance(rng: &mut ChaCha8Rng, index: usize) -> Result<Instance> {
    let spec = random_spec(rng, index);
    let net = Network::build(spec.clone(), InitPolicy::GlorotUniform, rng)?;
    // Zero biases put dead-unit pre-activations exactly on the ReLU kink.
    let params = net.params().iter().map(|p| uniform(rng, p.shape(), -0.8, 0.8)).collect();
    let net = Network::from_params(spec.clone(), params)?;
    let batch = dim(rng, 1, 3);
    let mut x_shape = vec![batch];
    x_shape.extend(&spec.input_shape);
    let x = uniform(rng, &x_shape, -1.0, 1.0);
    let classes = spec.output_shape()?[0];
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    let seed: u64 = rng.random();
    let is_d = index % 3 == 2;
    let mut inputs = net.params().to_vec();
    inputs.push(x);
    Ok(inst(spec.name.clone(), inputs, move |t, v| {
        let (params, x) = v.split_at(v.len() - 1);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let out = net.forward_with(params, x[0], Mode::Train, &mut r)?;
        let head = if is_d { student_adv_loss(out.logits)? } else { ce_loss(out.logits, &labels)? };
        head.add(project(t, out.feature)?.scale(0.1))
    }))
}

/// Outcome of one instance.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceResult {
    pub name: String,
    pub network: bool,
    pub report: GradReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub op_instances: usize,
    pub networks: usize,
    pub total: GradReport,
    pub results: Vec<InstanceResult>,
}

impl SuiteReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.total.max_rel_err < tolerance
    }

    pub fn worst(&self) -> Option<&InstanceResult> {
        self.results.iter().max_by(|a, b| a.report.max_rel_err.total_cmp(&b.report.max_rel_err))
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} operator instances, {} networks, {} gradient entries, max relative error {:.3e}",
            self.op_instances, self.networks, self.total.checked, self.total.max_rel_err
        )?;
        if let Some(w) = self.worst() {
            write!(f, " (worst: {})", w.name)?;
        }
        Ok(())
    }
}

/// Checks `rounds` randomized copies of every operator and loss, plus
/// `networks` random small networks (MLPs, CNNs, discriminators), with
/// gradients taken with respect to every parameter and the input.
pub fn oracle_suite(seed: u64, rounds: usize, networks: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let mut total = GradReport::default();
    let mut op_instances = 0;
    for _ in 0..rounds {
        for case in op_cases(&mut rng) {
            let report = check_gradients(&case.inputs, &case.f)?;
            total.merge(&report);
            op_instances += 1;
            results.push(InstanceResult { name: case.name, network: false, report });
        }
    }
    for i in 0..networks {
        let case = network_instance(&mut rng, i)?;
        let report = check_gradients(&case.inputs, &case.f)?;
        total.merge(&report);
        results.push(InstanceResult { name: case.name, network: true, report });
    }
    Ok(SuiteReport { op_instances, networks, total, results })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_grad_of_square() {
        let x = Tensor::new(vec![2], vec![1.0, -3.0]).unwrap();
        let g = numerical_grad(&|_: &Tape, v: &[Var<'_>]| Ok(v[0].mul(v[0])?.sum()), &[x], 0, FD_STEP).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] + 6.0).abs() < 1e-8);
    }

    #[test]
    fn detects_wrong_gradient() {
        // detach hides the dependency from the tape but not from differences.
        let x = Tensor::new(vec![1], vec![2.0]).unwrap();
        let r = check_gradients(&[x], |_, v| Ok(v[0].detach().mul(v[0])?.sum())).unwrap();
        assert!(r.max_rel_err > 0.4);
    }

    #[test]
    fn small_suite_passes() {
        let r = oracle_suite(3, 1, 3).unwrap();
        assert!(r.passed(1e-4), "{r}");
        assert_eq!(r.networks, 3);
        assert!(r.op_instances >= 30);
    }
}
