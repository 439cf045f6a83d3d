use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Central difference of a scalar function of one tensor.
fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn matmul_examples() {
    let tape = Tape::new();
    let eye = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    assert_eq!(eye.matmul(m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(&t(&[1, 2], &[1.0, 2.0]));
    let b = tape.constant(&t(&[2, 1], &[3.0, 4.0]));
    assert_eq!(a.matmul(b).unwrap().value().data(), &[11.0]);

    let err = a.matmul(a).unwrap_err().to_string();
    assert!(err.contains("[1, 2]"), "{err}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let a0 = t(&[1, 2], &[1.0, 1.0]);
    let b0 = t(&[2, 1], &[2.0, 5.0]);
    let tape = Tape::new();
    let a = tape.param(&a0);
    let b = tape.constant(&b0);
    a.matmul(b).unwrap().sum().backward().unwrap();
    let g = a.grad().unwrap();
    assert_eq!(g.data(), &[2.0, 5.0]);
    let fd = numeric_grad(&a0, |x| {
        let tape = Tape::new();
        tape.constant(x).matmul(tape.constant(&b0)).unwrap().sum().item()
    });
    for (x, y) in g.data().iter().zip(fd) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn matmul_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (m, k, n) = (5, 7, 3);
    let a: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tape = Tape::new();
    let out = tape.constant(&t(&[m, k], &a)).matmul(tape.constant(&t(&[k, n], &b))).unwrap().value();
    for i in 0..m {
        for j in 0..n {
            let s: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            assert!((out.data()[i * n + j] - s).abs() < 1e-13);
        }
    }
}

#[test]
fn conv2d_examples() {
    let tape = Tape::new();
    let ones = tape.constant(&Tensor::full(vec![1, 1, 3, 3], 1.0));
    let k = tape.constant(&Tensor::full(vec![1, 1, 3, 3], 1.0));
    let out = ones.conv2d(k, 1, 0).unwrap();
    assert_eq!(out.shape(), vec![1, 1, 1, 1]);
    assert_eq!(out.item(), 9.0);

    let asc: Vec<f64> = (0..16).map(f64::from).collect();
    let x = tape.constant(&t(&[1, 1, 4, 4], &asc));
    let k = tape.constant(&Tensor::full(vec![1, 1, 2, 2], 1.0));
    assert_eq!(x.conv2d(k, 2, 0).unwrap().value().data(), &[10.0, 18.0, 42.0, 50.0]);

    let unit = tape.constant(&Tensor::full(vec![1, 1, 1, 1], 1.0));
    assert_eq!(x.conv2d(unit, 1, 0).unwrap().value().data(), &asc[..]);

    let big = tape.constant(&Tensor::full(vec![1, 1, 5, 5], 1.0));
    assert!(matches!(x.conv2d(big, 1, 0), Err(Error::Dimension(_))));
    assert!(x.conv2d(big, 1, 1).is_ok());
}

#[test]
fn activation_examples() {
    let tape = Tape::new();
    assert_eq!(tape.constant(&Tensor::scalar(0.0)).sigmoid().item(), 0.5);
    let r = tape.constant(&t(&[2], &[-1.0, 2.0])).relu();
    assert_eq!(r.value().data(), &[0.0, 2.0]);
    for temp in [0.1, 1.0, 7.0] {
        let s = tape.constant(&t(&[1, 2], &[0.0, 0.0])).softmax(temp).unwrap();
        assert_eq!(s.value().data(), &[0.5, 0.5]);
    }
    let x = tape.constant(&t(&[1, 2], &[0.0, 0.0]));
    assert!(matches!(x.softmax(0.0), Err(Error::Config(_))));
    assert!(matches!(x.softmax(-1.0), Err(Error::Config(_))));
    let extreme = tape.constant(&t(&[1, 3], &[-800.0, 0.0, 800.0])).sigmoid();
    assert!(extreme.value().data().iter().all(|v| v.is_finite()));
}

#[test]
fn log_is_floored() {
    let tape = Tape::new();
    let x = tape.param(&t(&[2], &[0.0, 1.0]));
    let y = x.log();
    assert_eq!(y.value().data()[0], LOG_FLOOR.ln());
    y.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), &[0.0, 1.0]);
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tape = Tape::new();
    let x = tape.constant(&Tensor::full(vec![4, 4], 1.0));
    let id = x.dropout(0.0, Mode::Train, &mut rng).unwrap();
    assert_eq!(id.value(), x.value());
    let ev = x.dropout(0.5, Mode::Eval, &mut rng).unwrap();
    assert_eq!(ev.value(), x.value());
    assert!(matches!(x.dropout(1.0, Mode::Train, &mut rng), Err(Error::Config(_))));
    assert!(matches!(x.dropout(-0.1, Mode::Train, &mut rng), Err(Error::Config(_))));
}

#[test]
fn dropout_preserves_expectation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tape = Tape::new();
    let x = tape.constant(&Tensor::full(vec![100_000], 1.0));
    let y = x.dropout(0.5, Mode::Train, &mut rng).unwrap();
    let mean = y.with_values(|v| v.iter().sum::<f64>() / v.len() as f64);
    assert!((0.99..=1.01).contains(&mean), "{mean}");
    assert!(y.with_values(|v| v.iter().all(|&e| e == 0.0 || e == 2.0)));
}

#[test]
fn dropout_backward_uses_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::new();
    let x = tape.param(&Tensor::full(vec![64], 1.0));
    let y = x.dropout(0.5, Mode::Train, &mut rng).unwrap();
    y.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap().data(), y.value().data());
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let w = tape.param(&Tensor::scalar(3.0));
    w.mul(w).unwrap().backward().unwrap();
    assert_eq!(w.grad().unwrap().data(), &[6.0]);

    let tape = Tape::new();
    let w = tape.param(&t(&[1], &[0.0]));
    w.sigmoid().sum().backward().unwrap();
    assert_eq!(w.grad().unwrap().data(), &[0.25]);
}

#[test]
fn backward_needs_scalar() {
    let tape = Tape::new();
    let w = tape.param(&t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(w.relu()), Err(Error::Contract(_))));
}

#[test]
fn repeated_backward_accumulates() {
    let tape = Tape::new();
    let w = tape.param(&t(&[2], &[1.0, -2.0]));
    let loss = w.mul(w).unwrap().sum();
    loss.backward().unwrap();
    loss.backward().unwrap();
    assert_eq!(w.grad().unwrap().data(), &[4.0, -8.0]);
    tape.zero_grad();
    assert!(w.grad().is_none());
}

#[test]
fn shared_input_sums_contributions() {
    // loss = sum(sigmoid(w) * relu(w) + 3w), w feeds three consumers.
    let w0 = t(&[3], &[0.7, -0.4, 1.3]);
    let f = |tape: &Tape, w: Var<'_>| -> f64 {
        let _ = tape;
        let a = w.sigmoid().mul(w.relu()).unwrap();
        a.add(w.scale(3.0)).unwrap().sum().item()
    };
    let tape = Tape::new();
    let w = tape.param(&w0);
    let a = w.sigmoid().mul(w.relu()).unwrap();
    a.add(w.scale(3.0)).unwrap().sum().backward().unwrap();
    let fd = numeric_grad(&w0, |x| {
        let tape = Tape::new();
        let v = tape.constant(x);
        f(&tape, v)
    });
    for (g, n) in w.grad().unwrap().data().iter().zip(fd) {
        assert!((g - n).abs() / n.abs().max(1e-6) < 1e-6, "{g} vs {n}");
    }
}

#[test]
fn group_mean_and_gather() {
    let tape = Tape::new();
    let x = tape.param(&t(&[2, 4], &[1.0, 3.0, 5.0, 7.0, 0.0, 2.0, 4.0, 8.0]));
    let g = x.group_mean(2).unwrap();
    assert_eq!(g.value().data(), &[2.0, 6.0, 1.0, 6.0]);
    assert!(x.group_mean(3).is_err());
    let p = x.gather(&[3, 0]).unwrap();
    assert_eq!(p.value().data(), &[7.0, 0.0]);
    assert!(matches!(x.gather(&[4, 0]), Err(Error::Data(_))));
}

#[test]
fn foreign_tape_is_rejected() {
    let t1 = Tape::new();
    let t2 = Tape::new();
    let a = t1.constant(&Tensor::scalar(1.0));
    let b = t2.constant(&Tensor::scalar(1.0));
    assert!(matches!(a.add(b), Err(Error::Contract(_))));
    assert!(matches!(t2.backward(a), Err(Error::Contract(_))));
}

#[test]
fn constants_do_not_track() {
    let tape = Tape::new();
    let c = tape.constant(&Tensor::scalar(2.0).with_requires_grad(true));
    assert!(!c.requires_grad());
    let leaf = tape.leaf(&Tensor::scalar(2.0).with_requires_grad(true));
    assert!(leaf.requires_grad());
    let d = leaf.detach();
    assert!(!d.requires_grad());
}
