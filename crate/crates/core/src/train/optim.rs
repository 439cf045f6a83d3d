use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    SgdMomentum,
    Adam,
}

/// Optimizer hyper-parameters and step-decay schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fraction of the total steps after which the rate is multiplied by
    /// `decay_factor`; `None` keeps it constant.
    pub decay_at: Option<f64>,
    pub decay_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_at: Some(0.4),
            decay_factor: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::Adam, learning_rate, ..Self::default() }
    }

    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self { kind: OptimizerKind::SgdMomentum, learning_rate, momentum, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return config_err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config_err(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return config_err(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return config_err("adam needs beta1, beta2 in [0, 1) and a positive epsilon");
        }
        if let Some(at) = self.decay_at {
            if !(0.0..=1.0).contains(&at) {
                return config_err(format!("decay_at must lie in [0, 1], got {at}"));
            }
        }
        if !(self.decay_factor > 0.0) {
            return config_err(format!("decay_factor must be positive, got {}", self.decay_factor));
        }
        Ok(())
    }
}

/// Per-parameter optimizer state for one network.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: OptimizerConfig,
    velocity: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: usize,
    decay_step: Option<usize>,
}

impl OptimizerState {
    /// State for `params`, with the decay step placed at
    /// `decay_at · total_steps`.
    pub fn new(config: OptimizerConfig, params: &[Tensor], total_steps: usize) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        let second = if config.kind == OptimizerKind::Adam { zeros() } else { Vec::new() };
        let decay_step = config.decay_at.map(|f| (f * total_steps as f64).round() as usize);
        Ok(Self { velocity: zeros(), second, step: 0, decay_step, config })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn decay_step(&self) -> Option<usize> {
        self.decay_step
    }

    /// Learning rate used by update number `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.decay_step {
            Some(d) if step >= d => self.config.learning_rate * self.config.decay_factor,
            _ => self.config.learning_rate,
        }
    }

    /// Learning rate of the next update.
    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.step)
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one update. Parameters that do not require gradients are left
    /// untouched.
    ///
    /// SGD: `v ← m·v − lr·(g + wd·w)`, `w ← w + v`.
    /// Adam: bias-corrected moments of `g + wd·w`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return dim_err(format!(
                "optimizer holds {} slots, got {} parameters and {} gradients",
                self.velocity.len(),
                params.len(),
                grads.len()
            ));
        }
        let lr = self.current_lr();
        let c = &self.config;
        self.step += 1;
        let t = self.step as i32;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != self.velocity[i].len() || g.len() != p.len() {
                return dim_err(format!("parameter {i}: shape {:?}, gradient {:?}", p.shape(), g.shape()));
            }
            if !p.requires_grad() {
                continue;
            }
            let w = p.data_mut();
            match c.kind {
                OptimizerKind::SgdMomentum => {
                    for ((w, v), g) in w.iter_mut().zip(&mut self.velocity[i]).zip(g.data()) {
                        *v = c.momentum * *v - lr * (g + c.weight_decay * *w);
                        *w += *v;
                    }
                }
                OptimizerKind::Adam => {
                    let (b1c, b2c) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
                    for (((w, m), s), g) in w.iter_mut().zip(&mut self.velocity[i]).zip(&mut self.second[i]).zip(g.data()) {
                        let g = g + c.weight_decay * *w;
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *s = c.beta2 * *s + (1.0 - c.beta2) * g * g;
                        *w -= lr * (*m / b1c) / ((*s / b2c).sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap().with_requires_grad(true)
    }

    #[test]
    fn sgd_matches_hand_arithmetic() {
        let cfg = OptimizerConfig { learning_rate: 0.1, momentum: 0.9, weight_decay: 0.01, decay_at: None, ..Default::default() };
        let mut p = vec![param(&[1.0, -2.0])];
        let mut opt = OptimizerState::new(cfg, &p, 10).unwrap();
        let g = vec![Tensor::new(vec![2], vec![0.5, 1.0]).unwrap()];
        opt.step(&mut p, &g).unwrap();
        // v = −0.1·(0.5 + 0.01) = −0.051; w = 0.949
        // v = −0.1·(1 − 0.02) = −0.098; w = −2.098
        assert!((p[0].data()[0] - 0.949).abs() < 1e-12);
        assert!((p[0].data()[1] + 2.098).abs() < 1e-12);
        opt.step(&mut p, &g).unwrap();
        // v = 0.9·(−0.051) − 0.1·(0.5 + 0.00949) = −0.096849
        assert!((opt.velocity()[0][0] + 0.096849).abs() < 1e-12);
        assert!((p[0].data()[0] - (0.949 - 0.096849)).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let cfg = OptimizerConfig { weight_decay: 0.0, ..OptimizerConfig::adam(0.01) };
        let mut p = vec![param(&[1.0, 1.0])];
        let mut opt = OptimizerState::new(cfg, &p, 10).unwrap();
        opt.step(&mut p, &[Tensor::new(vec![2], vec![3.0, -0.2]).unwrap()]).unwrap();
        assert!((p[0].data()[0] - 0.99).abs() < 1e-9);
        assert!((p[0].data()[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn decay_is_one_magnitude() {
        let p = vec![param(&[0.0])];
        let opt = OptimizerState::new(OptimizerConfig::default(), &p, 500).unwrap();
        assert_eq!(opt.decay_step(), Some(200));
        assert_eq!(opt.lr_at(199), 0.001);
        assert!((opt.lr_at(200) - 0.1 * opt.lr_at(199)).abs() < 1e-18);
    }

    #[test]
    fn frozen_params_untouched() {
        let mut p = vec![Tensor::new(vec![1], vec![2.0]).unwrap()];
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(1.0, 0.0), &p, 1).unwrap();
        opt.step(&mut p, &[Tensor::new(vec![1], vec![1.0]).unwrap()]).unwrap();
        assert_eq!(p[0].data(), &[2.0]);
    }

    #[test]
    fn rejects_bad_config() {
        let p: Vec<Tensor> = vec![];
        assert!(OptimizerState::new(OptimizerConfig::sgd(0.0, 0.9), &p, 1).is_err());
        assert!(OptimizerState::new(OptimizerConfig::sgd(0.1, 1.0), &p, 1).is_err());
    }
}
