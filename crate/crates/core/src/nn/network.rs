use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{dim_err, Error, Result};
use crate::tape::{Mode, Tape, Var};
use crate::tensor::Tensor;

/// How fresh parameters are drawn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Weights ~ U(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))), biases 0.
    #[default]
    GlorotUniform,
    Zeros,
}

/// A [`NetworkSpec`] with instantiated parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Tensor>,
}

/// Output of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward<'t> {
    pub logits: Var<'t>,
    pub feature: Var<'t>,
}

/// Detached output of an evaluation-mode forward pass.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Tensor,
    pub feature: Tensor,
}

impl Network {
    /// Validates `spec` and draws its parameters from `rng`.
    pub fn build<R: Rng + ?Sized>(spec: NetworkSpec, init: InitPolicy, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        for layer in &spec.layers {
            let (fan_in, fan_out) = match *layer {
                LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
                LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                    (in_channels * kernel * kernel, out_channels * kernel * kernel)
                }
                _ => continue,
            };
            let shapes = layer.param_shapes();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = shapes[0].iter().product();
            let w: Vec<f64> = match init {
                InitPolicy::GlorotUniform => (0..n).map(|_| rng.random_range(-limit..limit)).collect(),
                InitPolicy::Zeros => vec![0.0; n],
            };
            params.push(Tensor::new(shapes[0].clone(), w)?.with_requires_grad(true));
            params.push(Tensor::zeros(shapes[1].clone()).with_requires_grad(true));
        }
        Ok(Self { spec, params })
    }

    /// Builds from explicit parameters, checking their shapes against the spec.
    pub fn from_params(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let expected: Vec<Vec<usize>> = spec.layers.iter().flat_map(LayerSpec::param_shapes).collect();
        let got: Vec<Vec<usize>> = params.iter().map(|p| p.shape().to_vec()).collect();
        if expected != got {
            return Err(Error::Build(format!("{}: parameter shapes {got:?} do not match {expected:?}", spec.name)));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Stops gradient tracking on every parameter.
    pub fn freeze(&mut self) {
        self.params.iter_mut().for_each(|p| p.set_requires_grad(false));
    }

    pub fn unfreeze(&mut self) {
        self.params.iter_mut().for_each(|p| p.set_requires_grad(true));
    }

    pub fn is_frozen(&self) -> bool {
        self.params.iter().all(|p| !p.requires_grad())
    }

    /// Exact parameter total, by enumerating the parameter tensors.
    pub fn count_params(&self) -> u64 {
        self.params.iter().map(|p| p.len() as u64).sum()
    }

    pub fn estimate_flops(&self, input_shape: &[usize]) -> Result<u64> {
        self.spec.estimate_flops_for(input_shape)
    }

    /// Records the parameters on `tape`; frozen ones become constants.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.leaf(p)).collect()
    }

    /// Records the parameters as constants regardless of their flags.
    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.constant(p)).collect()
    }

    /// Runs the layers on `x` (shape `[N, input_shape…]`) with bound parameters.
    pub fn forward_with<'t, R: Rng + ?Sized>(
        &self,
        params: &[Var<'t>],
        x: Var<'t>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward<'t>> {
        let shape = x.shape();
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            return dim_err(format!(
                "{} expects input [N, {:?}], got {shape:?}",
                self.spec.name, self.spec.input_shape
            ));
        }
        if params.len() != self.params.len() {
            return dim_err(format!("{} bound {} of {} parameters", self.spec.name, params.len(), self.params.len()));
        }
        let mut h = x;
        let mut feature = None;
        let mut cursor = 0;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            h = match *layer {
                LayerSpec::Dense { .. } => {
                    let out = h.matmul(params[cursor])?.add_row(params[cursor + 1])?;
                    cursor += 2;
                    out
                }
                LayerSpec::Conv2d { stride, padding, .. } => {
                    let out = h.conv2d(params[cursor], stride, padding)?.add_channel(params[cursor + 1])?;
                    cursor += 2;
                    out
                }
                LayerSpec::Relu => h.relu(),
                LayerSpec::Sigmoid => h.sigmoid(),
                LayerSpec::Dropout { rate } => h.dropout(rate, mode, rng)?,
                LayerSpec::AvgPool => h.avg_pool()?,
                LayerSpec::Flatten => h.flatten()?,
            };
            if self.spec.feature_tap == Some(i) {
                feature = Some(h);
            }
        }
        Ok(Forward { logits: h, feature: feature.unwrap_or(h) })
    }

    /// Binds the parameters on `tape` and runs [`Network::forward_with`].
    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape,
        x: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<Var<'t>>, Forward<'t>)> {
        let params = self.bind(tape);
        let out = self.forward_with(&params, tape.constant(x), mode, rng)?;
        Ok((params, out))
    }

    /// Evaluation-mode forward pass without gradient tracking.
    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        let tape = Tape::new();
        let params = self.bind_constant(&tape);
        // Eval mode never draws from the generator.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward_with(&params, tape.constant(x), Mode::Eval, &mut rng)?;
        Ok(Prediction { logits: out.logits.value(), feature: out.feature.value() })
    }

    /// Gradients accumulated on `bound` parameters, zeros where none arrived.
    pub fn gradients(&self, bound: &[Var<'_>]) -> Vec<Tensor> {
        bound
            .iter()
            .zip(&self.params)
            .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{make_discriminator, student_mlp, teacher_mlp};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn dense_param_count() {
        let spec = NetworkSpec::new("d", vec![4], vec![LayerSpec::dense(4, 3)], None);
        let net = Network::build(spec, InitPolicy::default(), &mut rng(0)).unwrap();
        assert_eq!(net.count_params(), 15);
    }

    #[test]
    fn same_seed_same_params() {
        let a = Network::build(teacher_mlp(8, 4), InitPolicy::default(), &mut rng(7)).unwrap();
        let b = Network::build(teacher_mlp(8, 4), InitPolicy::default(), &mut rng(7)).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            let pb: Vec<u64> = p.data().iter().map(|v| v.to_bits()).collect();
            let qb: Vec<u64> = q.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(pb, qb);
        }
        let c = Network::build(teacher_mlp(8, 4), InitPolicy::default(), &mut rng(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let net = Network::build(make_discriminator(64, &[128]).unwrap(), InitPolicy::default(), &mut rng(1)).unwrap();
        let limit = (6.0f64 / (64.0 + 128.0)).sqrt();
        assert!(net.params()[0].data().iter().all(|v| v.abs() <= limit));
        assert!(net.params()[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_forward() {
        let spec = NetworkSpec::new("id", vec![2], vec![LayerSpec::dense(2, 2)], None);
        let params = vec![
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(vec![2]),
        ];
        let net = Network::from_params(spec, params).unwrap();
        let out = net.predict(&Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(out.logits.data(), &[1.0, 2.0]);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut spec = teacher_mlp(2, 3);
        spec.layers.insert(4, LayerSpec::Dropout { rate: 0.5 });
        let net = Network::build(spec, InitPolicy::default(), &mut rng(3)).unwrap();
        let x = Tensor::new(vec![3, 2], vec![0.1, -0.4, 1.0, 2.0, -1.5, 0.3]).unwrap();
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.feature, b.feature);
    }

    #[test]
    fn feature_tap_shape() {
        let spec = NetworkSpec::new(
            "mlp",
            vec![2],
            vec![
                LayerSpec::dense(2, 16),
                LayerSpec::Relu,
                LayerSpec::dense(16, 8),
                LayerSpec::Relu,
                LayerSpec::dense(8, 5),
            ],
            Some(3),
        );
        let net = Network::build(spec, InitPolicy::default(), &mut rng(0)).unwrap();
        let out = net.predict(&Tensor::zeros(vec![6, 2])).unwrap();
        assert_eq!(out.feature.shape(), &[6, 8]);
        assert_eq!(out.logits.shape(), &[6, 5]);
    }

    #[test]
    fn wrong_input_shape_is_dimension_error() {
        let net = Network::build(student_mlp(4, 2), InitPolicy::default(), &mut rng(0)).unwrap();
        assert!(matches!(net.predict(&Tensor::zeros(vec![3, 5])), Err(Error::Dimension(_))));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut net = Network::build(student_mlp(3, 2), InitPolicy::default(), &mut rng(0)).unwrap();
        net.freeze();
        assert!(net.is_frozen());
        let tape = Tape::new();
        let x = Tensor::full(vec![2, 3], 0.5);
        let (bound, out) = net.forward(&tape, &x, Mode::Train, &mut rng(0)).unwrap();
        assert!(!out.logits.requires_grad());
        out.logits.sum().backward().unwrap();
        assert!(bound.iter().all(|v| v.grad().is_none()));
    }
}
