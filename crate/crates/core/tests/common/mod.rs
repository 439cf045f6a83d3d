//! Naive reference implementations and fixtures shared by the integration
//! tests. Every oracle here works on plain slices with explicit index loops
//! and never calls into the library's numeric code.

#![allow(dead_code)]

use std::path::PathBuf;

use advdistill::experiment::ExperimentConfig;
use advdistill::losses::PROB_CLAMP;
use advdistill::{Tape, Tensor, Var};

/// Cross-correlation over an explicitly zero-padded copy of the input,
/// summing each output over the kernel in `(c, i, j)` row-major order.
pub fn conv2d_naive(x: &[f64], xs: [usize; 4], k: &[f64], ks: [usize; 4], stride: usize, pad: usize) -> (Vec<f64>, [usize; 4]) {
    let [n, c, h, w] = xs;
    let [f, kc, kh, kw] = ks;
    assert_eq!(c, kc);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0; n * c * ph * pw];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for z in 0..w {
                    padded[((b * c + ch) * ph + y + pad) * pw + z + pad] = x[((b * c + ch) * h + y) * w + z];
                }
            }
        }
    }
    let oh = (ph - kh) / stride + 1;
    let ow = (pw - kw) / stride + 1;
    let mut out = vec![0.0; n * f * oh * ow];
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for z in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let xv = padded[((b * c + ch) * ph + y * stride + i) * pw + z * stride + j];
                                acc += xv * k[((o * c + ch) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((b * f + o) * oh + y) * ow + z] = acc;
                }
            }
        }
    }
    (out, [n, f, oh, ow])
}

pub fn avg_pool_naive(x: &[f64], xs: [usize; 4]) -> Vec<f64> {
    let [n, c, h, w] = xs;
    let mut out = vec![0.0; n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for z in 0..w {
                    s += x[((b * c + ch) * h + y) * w + z];
                }
            }
            out[b * c + ch] = s / (h * w) as f64;
        }
    }
    out
}

/// Row-wise `exp(x/T) / Σ exp(x/T)` without any stabilisation.
pub fn softmax_naive(x: &[f64], cols: usize, t: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let z: f64 = row.iter().map(|v| (v / t).exp()).sum();
        out.extend(row.iter().map(|v| (v / t).exp() / z));
    }
    out
}

pub fn log_softmax_naive(x: &[f64], cols: usize, t: f64) -> Vec<f64> {
    softmax_naive(x, cols, t).into_iter().map(f64::ln).collect()
}

fn clamp(p: f64) -> f64 {
    p.max(PROB_CLAMP).min(1.0 - PROB_CLAMP)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn adv_loss_naive(d_teacher: &[f64], d_student: &[f64]) -> f64 {
    mean(d_teacher.iter().map(|&p| clamp(p).ln())) + mean(d_student.iter().map(|&p| (1.0 - clamp(p)).ln()))
}

pub fn student_adv_loss_naive(d_student: &[f64]) -> f64 {
    -mean(d_student.iter().map(|&p| clamp(p).ln()))
}

pub fn data_loss_naive(teacher: &[f64], student: &[f64], cols: usize) -> f64 {
    let rows = teacher.len() / cols;
    let mut total = 0.0;
    for r in 0..rows {
        for j in 0..cols {
            let d = teacher[r * cols + j] - student[r * cols + j];
            total += d * d;
        }
    }
    total / rows as f64
}

pub fn l2_regularizer_naive(weights: &[&[f64]], mu: f64) -> f64 {
    -mu * weights.iter().flat_map(|w| w.iter()).map(|v| v * v).sum::<f64>()
}

pub fn l1_regularizer_naive(weights: &[&[f64]], mu: f64) -> f64 {
    -mu * weights.iter().flat_map(|w| w.iter()).map(|v| v.abs()).sum::<f64>()
}

pub fn adversarial_samples_naive(d_student: &[f64]) -> f64 {
    mean(d_student.iter().map(|&p| clamp(p).ln()))
}

pub fn kd_loss_naive(teacher: &[f64], student: &[f64], cols: usize, t: f64) -> f64 {
    let p = softmax_naive(teacher, cols, t);
    let q = softmax_naive(student, cols, t);
    let rows = teacher.len() / cols;
    let mut total = 0.0;
    for i in 0..teacher.len() {
        total -= p[i] * q[i].ln();
    }
    t * t * total / rows as f64
}

pub fn ce_loss_naive(logits: &[f64], labels: &[usize], cols: usize) -> f64 {
    let p = softmax_naive(logits, cols, 1.0);
    mean(labels.iter().enumerate().map(|(r, &l)| -p[r * cols + l].ln()))
}

/// Column tensor `[N, 1]`.
pub fn column(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
}

pub fn matrix(rows: usize, cols: usize, v: &[f64]) -> Tensor {
    Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
}

/// Value of a scalar function evaluated on a fresh tape over constants.
pub fn eval_scalar(inputs: &[Tensor], f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> advdistill::Result<Var<'t>>) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t)).collect();
    f(&tape, &vars).unwrap().item()
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Path of a file shipped at the workspace root.
pub fn workspace_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// The shipped desk-scale configuration of the standard synthetic task.
pub fn desk_config() -> ExperimentConfig {
    ExperimentConfig::load(&workspace_file("configs/blobs.toml")).unwrap()
}
