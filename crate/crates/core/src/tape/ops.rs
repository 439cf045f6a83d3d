use rand::Rng;

use super::gemm::{gemm, View};
use super::{ConvGeom, Mode, Op, Var};
use crate::error::{config_err, dim_err, Error, Result};

/// Lower bound applied to the argument of [`Var::log`].
pub const LOG_FLOOR: f64 = 1e-12;

impl<'t> Var<'t> {
    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands live on different tapes".into()))
        }
    }

    fn unary(&self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(shape, value, op, rg)
    }

    fn map(&self, f: impl Fn(f64) -> f64, op: Op) -> Var<'t> {
        let (shape, value) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            (n.shape.clone(), n.value.iter().map(|&v| f(v)).collect())
        };
        self.unary(shape, value, op)
    }

    fn zip(&self, other: &Var<'t>, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (shape, value, rg) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape != b.shape {
                return dim_err(format!("{name}: shapes {:?} and {:?} differ", a.shape, b.shape));
            }
            let v = a.value.iter().zip(&b.value).map(|(&x, &y)| f(x, y)).collect();
            (a.shape.clone(), v, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(shape, value, op, rg))
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (m, k, n, value, rg) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return dim_err(format!("matmul of {:?} and {:?}", a.shape, b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, View::rm(&a.value, k), View::rm(&b.value, n), &mut out, 0.0);
            (m, k, n, out, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(vec![m, n], value, Op::MatMul { a: self.id, b: other.id, m, k, n }, rg))
    }

    /// Adds a bias vector of length `cols` to every row of a `[rows×cols]` matrix.
    pub fn add_row(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias)?;
        let (shape, value, rg, cols) = {
            let nodes = self.tape.nodes();
            let (x, b) = (&nodes[self.id], &nodes[bias.id]);
            if x.shape.len() != 2 || b.value.len() != x.shape[1] {
                return dim_err(format!("bias {:?} cannot be added to rows of {:?}", b.shape, x.shape));
            }
            let cols = x.shape[1];
            let v = x.value.iter().enumerate().map(|(i, &v)| v + b.value[i % cols]).collect();
            (x.shape.clone(), v, x.requires_grad || b.requires_grad, cols)
        };
        Ok(self.tape.push(shape, value, Op::AddRow { x: self.id, bias: bias.id, cols }, rg))
    }

    /// Adds a per-channel bias to an `[N×C×H×W]` tensor.
    pub fn add_channel(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias)?;
        let (shape, value, rg, c, hw) = {
            let nodes = self.tape.nodes();
            let (x, b) = (&nodes[self.id], &nodes[bias.id]);
            if x.shape.len() != 4 || b.value.len() != x.shape[1] {
                return dim_err(format!("channel bias {:?} for input {:?}", b.shape, x.shape));
            }
            let (c, hw) = (x.shape[1], x.shape[2] * x.shape[3]);
            let v = x.value.iter().enumerate().map(|(i, &v)| v + b.value[(i / hw) % c]).collect();
            (x.shape.clone(), v, x.requires_grad || b.requires_grad, c, hw)
        };
        Ok(self.tape.push(shape, value, Op::AddChannel { x: self.id, bias: bias.id, c, hw }, rg))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(&other, "add", |a, b| a + b, Op::Add { a: self.id, b: other.id })
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(&other, "sub", |a, b| a - b, Op::Sub { a: self.id, b: other.id })
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(&other, "mul", |a, b| a * b, Op::Mul { a: self.id, b: other.id })
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.map(|v| v * s, Op::Scale { x: self.id, s })
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        self.map(|v| v + s, Op::AddScalar { x: self.id })
    }

    pub fn relu(&self) -> Var<'t> {
        self.map(|v| v.max(0.0), Op::Relu { x: self.id })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.map(sigmoid, Op::Sigmoid { x: self.id })
    }

    /// Natural log with the argument clamped to at least [`LOG_FLOOR`].
    pub fn log(&self) -> Var<'t> {
        self.map(|v| v.max(LOG_FLOOR).ln(), Op::Log { x: self.id })
    }

    pub fn abs(&self) -> Var<'t> {
        self.map(f64::abs, Op::Abs { x: self.id })
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'t> {
        self.map(|v| v.clamp(lo, hi), Op::Clamp { x: self.id, lo, hi })
    }

    fn rowwise(&self, temperature: f64, name: &str) -> Result<(Vec<usize>, usize, Vec<f64>)> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return config_err(format!("{name} temperature must be positive, got {temperature}"));
        }
        let nodes = self.tape.nodes();
        let x = &nodes[self.id];
        if x.shape.len() != 2 {
            return dim_err(format!("{name} expects [N×C], got {:?}", x.shape));
        }
        Ok((x.shape.clone(), x.shape[1], x.value.clone()))
    }

    /// Row-wise `exp(x/T) / Σ exp(x/T)`, stabilised by subtracting the row max.
    pub fn softmax(&self, temperature: f64) -> Result<Var<'t>> {
        let (shape, cols, mut v) = self.rowwise(temperature, "softmax")?;
        for row in v.chunks_mut(cols) {
            softmax_row(row, temperature);
        }
        Ok(self.unary(shape, v, Op::Softmax { x: self.id, cols, temperature }))
    }

    /// Row-wise log of [`Var::softmax`].
    pub fn log_softmax(&self, temperature: f64) -> Result<Var<'t>> {
        let (shape, cols, mut v) = self.rowwise(temperature, "log_softmax")?;
        for row in v.chunks_mut(cols) {
            log_softmax_row(row, temperature);
        }
        Ok(self.unary(shape, v, Op::LogSoftmax { x: self.id, cols, temperature }))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.with_values(|v| v.iter().sum());
        self.unary(vec![1], vec![s], Op::Sum { x: self.id })
    }

    pub fn mean(&self) -> Var<'t> {
        let s = self.with_values(|v| v.iter().sum::<f64>() / v.len() as f64);
        self.unary(vec![1], vec![s], Op::Mean { x: self.id })
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let n = self.numel();
        if shape.iter().product::<usize>() != n || shape.contains(&0) {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape()));
        }
        let v = self.with_values(<[f64]>::to_vec);
        Ok(self.unary(shape, v, Op::Reshape { x: self.id }))
    }

    /// Collapses all axes after the first.
    pub fn flatten(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        let n = shape[0];
        self.reshape(vec![n, self.numel() / n])
    }

    /// Copy of this value that blocks gradient flow.
    pub fn detach(&self) -> Var<'t> {
        let (shape, v) = {
            let nodes = self.tape.nodes();
            (nodes[self.id].shape.clone(), nodes[self.id].value.clone())
        };
        self.tape.push(shape, v, Op::Leaf, false)
    }

    /// 2-d cross-correlation of `[N×C×H×W]` input with `[F×C×kh×kw]` kernel.
    /// Each output is summed over the kernel in row-major `(c, i, j)` order.
    pub fn conv2d(&self, kernel: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        self.same_tape(&kernel)?;
        if stride == 0 {
            return config_err("conv2d stride must be positive");
        }
        let (g, value, rg) = {
            let nodes = self.tape.nodes();
            let (x, k) = (&nodes[self.id], &nodes[kernel.id]);
            if x.shape.len() != 4 || k.shape.len() != 4 || x.shape[1] != k.shape[1] {
                return dim_err(format!("conv2d of input {:?} with kernel {:?}", x.shape, k.shape));
            }
            let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
            let (f, kh, kw) = (k.shape[0], k.shape[2], k.shape[3]);
            if kh > h + 2 * padding || kw > w + 2 * padding {
                return dim_err(format!(
                    "kernel {kh}×{kw} larger than padded input {}×{}",
                    h + 2 * padding,
                    w + 2 * padding
                ));
            }
            let oh = (h + 2 * padding - kh) / stride + 1;
            let ow = (w + 2 * padding - kw) / stride + 1;
            let g = ConvGeom { n, c, h, w, f, kh, kw, stride, pad: padding, oh, ow };
            (g, conv2d_forward(&x.value, &k.value, &g), x.requires_grad || k.requires_grad)
        };
        Ok(self.tape.push(vec![g.n, g.f, g.oh, g.ow], value, Op::Conv2d { x: self.id, k: kernel.id, g }, rg))
    }

    /// Global average over the spatial axes: `[N×C×H×W] → [N×C]`.
    pub fn avg_pool(&self) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return dim_err(format!("avg_pool expects [N×C×H×W], got {shape:?}"));
        }
        let hw = shape[2] * shape[3];
        let v = self.with_values(|v| avg_pool_forward(v, hw));
        Ok(self.unary(vec![shape[0], shape[1]], v, Op::AvgPool { x: self.id, hw }))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`; eval mode
    /// is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, mode: Mode, rng: &mut R) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return config_err(format!("dropout rate must lie in [0, 1), got {rate}"));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(*self);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> =
            (0..self.numel()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let v = self.with_values(|v| v.iter().zip(&mask).map(|(a, m)| a * m).collect());
        Ok(self.unary(self.shape(), v, Op::Dropout { x: self.id, mask }))
    }

    /// Picks `x[i, idx[i]]` from each row of an `[N×C]` matrix, giving `[N]`.
    pub fn gather(&self, idx: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 || shape[0] != idx.len() {
            return dim_err(format!("gather of {} indices from {shape:?}", idx.len()));
        }
        let cols = shape[1];
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return Err(Error::Data(format!("index {bad} out of range 0..{cols}")));
        }
        let v = self.with_values(|v| idx.iter().enumerate().map(|(r, &j)| v[r * cols + j]).collect());
        Ok(self.unary(vec![idx.len()], v, Op::Gather { x: self.id, cols, idx: idx.to_vec() }))
    }

    /// Averages contiguous column blocks: `[N×D] → [N×groups]`, `groups | D`.
    pub fn group_mean(&self, groups: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 || groups == 0 || shape[1] % groups != 0 {
            return dim_err(format!("cannot average {shape:?} into {groups} column groups"));
        }
        let cols = shape[1];
        let size = cols / groups;
        let v = self.with_values(|v| {
            v.chunks(size).map(|c| c.iter().sum::<f64>() / size as f64).collect()
        });
        Ok(self.unary(vec![shape[0], groups], v, Op::GroupMean { x: self.id, cols, groups }))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_row(row: &mut [f64], t: f64) {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v / t - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn log_softmax_row(row: &mut [f64], t: f64) {
    let m = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / t));
    let s: f64 = row.iter().map(|&v| (v / t - m).exp()).sum();
    let ls = s.ln();
    for v in row.iter_mut() {
        *v = *v / t - m - ls;
    }
}

fn conv2d_forward(x: &[f64], k: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.f * g.oh * g.ow];
    let mut o = 0;
    for n in 0..g.n {
        for f in 0..g.f {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for c in 0..g.c {
                        for i in 0..g.kh {
                            let iy = (oy * g.stride + i) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for j in 0..g.kw {
                                let ix = (ox * g.stride + j) as isize - g.pad as isize;
                                if ix < 0 || ix >= g.w as isize {
                                    continue;
                                }
                                let xi = ((n * g.c + c) * g.h + iy as usize) * g.w + ix as usize;
                                let ki = ((f * g.c + c) * g.kh + i) * g.kw + j;
                                acc += x[xi] * k[ki];
                            }
                        }
                    }
                    out[o] = acc;
                    o += 1;
                }
            }
        }
    }
    out
}

fn avg_pool_forward(x: &[f64], hw: usize) -> Vec<f64> {
    x.chunks(hw).map(|c| c.iter().sum::<f64>() / hw as f64).collect()
}
