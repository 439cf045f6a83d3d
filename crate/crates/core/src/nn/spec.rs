use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// One layer of a [`NetworkSpec`]. Convolution kernels are square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    Sigmoid,
    Dropout { rate: f64 },
    AvgPool,
    Flatten,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize) -> Self {
        Self::Dense { inputs, outputs }
    }

    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self::Conv2d { in_channels, out_channels, kernel, stride, padding }
    }

    pub fn is_parametric(&self) -> bool {
        matches!(self, Self::Dense { .. } | Self::Conv2d { .. })
    }

    /// Parameter tensor shapes in declaration order (weight, then bias).
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Self::Dense { inputs, outputs } => vec![vec![inputs, outputs], vec![outputs]],
            Self::Conv2d { in_channels, out_channels, kernel, .. } => {
                vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]]
            }
            _ => Vec::new(),
        }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> u64 {
        match *self {
            Self::Dense { inputs, outputs } => (inputs * outputs + outputs) as u64,
            Self::Conv2d { in_channels, out_channels, kernel, .. } => {
                (out_channels * in_channels * kernel * kernel + out_channels) as u64
            }
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            Self::Dense { inputs, outputs } => match input {
                [d] if *d == inputs => Ok(vec![outputs]),
                _ => Err(format!("dense expects [{inputs}], got {input:?}")),
            },
            Self::Conv2d { in_channels, out_channels, kernel, stride, padding } => match input {
                [c, h, w] if *c == in_channels => {
                    if stride == 0 || kernel == 0 {
                        return Err("conv2d kernel and stride must be positive".into());
                    }
                    if kernel > h + 2 * padding || kernel > w + 2 * padding {
                        return Err(format!("kernel {kernel} larger than padded input {input:?}"));
                    }
                    Ok(vec![
                        out_channels,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ])
                }
                _ => Err(format!("conv2d expects [{in_channels}, H, W], got {input:?}")),
            },
            Self::AvgPool => match input {
                [c, _, _] => Ok(vec![*c]),
                _ => Err(format!("avgpool expects [C, H, W], got {input:?}")),
            },
            Self::Flatten => Ok(vec![input.iter().product()]),
            Self::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(format!("dropout rate {rate} outside [0, 1)"))
            }
            Self::Relu | Self::Sigmoid | Self::Dropout { .. } => Ok(input.to_vec()),
        }
    }

    /// Floating point operations per sample: one multiply-add counts as 2,
    /// activations, pooling and reshapes are free.
    pub fn flops(&self, input: &[usize], output: &[usize]) -> u64 {
        match *self {
            Self::Dense { inputs, outputs } => (2 * inputs * outputs + outputs) as u64,
            Self::Conv2d { kernel, .. } => {
                (2 * input[0] * kernel * kernel * output[0] * output[1] * output[2]) as u64
            }
            _ => 0,
        }
    }
}

/// Declarative network: per-sample input shape, ordered layers, and the index
/// of the layer whose output is exposed as the feature representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub feature_tap: Option<usize>,
}

impl NetworkSpec {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, layers: Vec<LayerSpec>, feature_tap: Option<usize>) -> Self {
        Self { name: name.into(), input_shape, layers, feature_tap }
    }

    /// Checks shape compatibility and the tap position; returns the
    /// per-sample output shape of every layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Build(format!("{}: bad input shape {:?}", self.name, self.input_shape)));
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.output_shape(&cur).map_err(|e| {
                let prev = if i == 0 { "input".to_string() } else { format!("layer {} ({:?})", i - 1, self.layers[i - 1]) };
                Error::Build(format!("{}: {prev} -> layer {i} ({layer:?}): {e}", self.name))
            })?;
            shapes.push(cur.clone());
        }
        if let Some(tap) = self.feature_tap {
            let last_param = self.layers.iter().rposition(LayerSpec::is_parametric);
            match last_param {
                Some(lp) if tap < lp => {}
                _ => {
                    return Err(Error::Build(format!(
                        "{}: feature tap {tap} must point at a layer before the final logits layer",
                        self.name
                    )))
                }
            }
        }
        Ok(shapes)
    }

    /// Per-sample shape of the final output.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.validate()?.pop().unwrap_or_else(|| self.input_shape.clone()))
    }

    /// Per-sample shape of the tapped feature (the output if there is no tap).
    pub fn feature_shape(&self) -> Result<Vec<usize>> {
        let shapes = self.validate()?;
        Ok(match self.feature_tap {
            Some(t) => shapes[t].clone(),
            None => shapes.last().cloned().unwrap_or_else(|| self.input_shape.clone()),
        })
    }

    pub fn count_params(&self) -> u64 {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// FLOPs of one forward pass for the spec's own input shape.
    pub fn estimate_flops(&self) -> Result<u64> {
        self.estimate_flops_for(&self.input_shape)
    }

    /// FLOPs of one forward pass for a given per-sample input shape.
    pub fn estimate_flops_for(&self, input_shape: &[usize]) -> Result<u64> {
        let mut cur = input_shape.to_vec();
        let mut total = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer
                .output_shape(&cur)
                .map_err(|e| Error::Dimension(format!("{}: layer {i}: {e}", self.name)))?;
            total += layer.flops(&cur, &out);
            cur = out;
        }
        Ok(total)
    }
}

/// Fully connected discriminator: ReLU between hidden layers and a single
/// sigmoid output unit. The feature tap is the last hidden activation.
pub fn make_discriminator(feature_dim: usize, hidden: &[usize]) -> Result<NetworkSpec> {
    if hidden.is_empty() {
        return config_err("discriminator needs at least one hidden layer");
    }
    if feature_dim == 0 || hidden.contains(&0) {
        return config_err("discriminator layer widths must be positive");
    }
    let mut layers = Vec::with_capacity(2 * hidden.len() + 2);
    let mut prev = feature_dim;
    for &h in hidden {
        layers.push(LayerSpec::dense(prev, h));
        layers.push(LayerSpec::Relu);
        prev = h;
    }
    let tap = layers.len() - 1;
    layers.push(LayerSpec::dense(prev, 1));
    layers.push(LayerSpec::Sigmoid);
    let name = format!("discriminator-{}", hidden.iter().map(|h| format!("{h}fc")).collect::<Vec<_>>().join("-"));
    Ok(NetworkSpec::new(name, vec![feature_dim], layers, Some(tap)))
}

/// Discriminator widths used unless a sweep says otherwise.
pub const DEFAULT_DISCRIMINATOR: [usize; 3] = [128, 256, 128];

/// `in → 64 → 64 → C`, tap after the second hidden activation.
pub fn teacher_mlp(input_dim: usize, classes: usize) -> NetworkSpec {
    NetworkSpec::new(
        "teacher-mlp",
        vec![input_dim],
        vec![
            LayerSpec::dense(input_dim, 64),
            LayerSpec::Relu,
            LayerSpec::dense(64, 64),
            LayerSpec::Relu,
            LayerSpec::dense(64, classes),
        ],
        Some(3),
    )
}

/// `in → 8 → C`, tap after the hidden activation.
pub fn student_mlp(input_dim: usize, classes: usize) -> NetworkSpec {
    NetworkSpec::new(
        "student-mlp",
        vec![input_dim],
        vec![LayerSpec::dense(input_dim, 8), LayerSpec::Relu, LayerSpec::dense(8, classes)],
        Some(1),
    )
}

/// Three 3×3 conv blocks (16, 32, 32 channels, the second with stride 2),
/// global average pool, linear classifier. Tap at the pool.
pub fn teacher_cnn(channels: usize, height: usize, width: usize, classes: usize) -> NetworkSpec {
    NetworkSpec::new(
        "teacher-cnn",
        vec![channels, height, width],
        vec![
            LayerSpec::conv(channels, 16, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::conv(16, 32, 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::conv(32, 32, 3, 1, 1),
            LayerSpec::Relu,
            LayerSpec::AvgPool,
            LayerSpec::dense(32, classes),
        ],
        Some(6),
    )
}

/// One strided 3×3 conv with 8 channels, average pool, linear classifier.
pub fn student_cnn(channels: usize, height: usize, width: usize, classes: usize) -> NetworkSpec {
    NetworkSpec::new(
        "student-cnn",
        vec![channels, height, width],
        vec![
            LayerSpec::conv(channels, 8, 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::AvgPool,
            LayerSpec::dense(8, classes),
        ],
        Some(2),
    )
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 4] = ["teacher-mlp", "student-mlp", "teacher-cnn", "student-cnn"];

/// Looks up a preset by name for the given per-sample input shape: `[D]` for
/// the MLPs, `[C, H, W]` for the CNNs.
pub fn preset(name: &str, input_shape: &[usize], classes: usize) -> Result<NetworkSpec> {
    let spec = match (name, input_shape) {
        ("teacher-mlp", [d]) => teacher_mlp(*d, classes),
        ("student-mlp", [d]) => student_mlp(*d, classes),
        ("teacher-cnn", [c, h, w]) => teacher_cnn(*c, *h, *w, classes),
        ("student-cnn", [c, h, w]) => student_cnn(*c, *h, *w, classes),
        (n, s) if PRESETS.contains(&n) => {
            return config_err(format!("preset {n} does not accept input shape {s:?}"))
        }
        (n, _) => return config_err(format!("unknown network preset {n:?}; expected one of {PRESETS:?}")),
    };
    spec.validate()?;
    Ok(spec)
}
