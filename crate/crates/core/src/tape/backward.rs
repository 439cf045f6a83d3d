//! Local backward rules, applied in reverse tape order.

use super::gemm::{gemm, View};
use super::ops::LOG_FLOOR;
use super::{Node, Op};

/// Computes `∂root/∂node` for every node reachable from `root` that tracks
/// gradients. The returned vector is indexed by node id.
pub(super) fn run(nodes: &[Node], root: usize) -> Vec<Option<Vec<f64>>> {
    let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
    if !nodes[root].requires_grad {
        return grads;
    }
    grads[root] = Some(vec![1.0]);
    for id in (0..=root).rev() {
        let node = &nodes[id];
        if !node.requires_grad || matches!(node.op, Op::Leaf) {
            continue;
        }
        let Some(g) = grads[id].take() else { continue };
        propagate(nodes, node, &g, &mut grads);
    }
    grads
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], id: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![0.0; len]))
}

fn acc_with(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64], f: impl Fn(usize, f64) -> f64) {
    if let Some(dst) = slot(nodes, grads, id) {
        for (i, (d, &gv)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(i, gv);
        }
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let y = &node.value;
    match node.op {
        Op::Leaf => {}
        Op::MatMul { a, b, m, k, n } => {
            if let Some(da) = slot(nodes, grads, a) {
                gemm(m, n, k, View::rm(g, n), View::rm_t(&nodes[b].value, n), da, 1.0);
            }
            if let Some(db) = slot(nodes, grads, b) {
                gemm(k, m, n, View::rm_t(&nodes[a].value, k), View::rm(g, n), db, 1.0);
            }
        }
        Op::AddRow { x, bias, cols } => {
            acc_with(nodes, grads, x, g, |_, gv| gv);
            if let Some(db) = slot(nodes, grads, bias) {
                for row in g.chunks(cols) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
            }
        }
        Op::AddChannel { x, bias, c, hw } => {
            acc_with(nodes, grads, x, g, |_, gv| gv);
            if let Some(db) = slot(nodes, grads, bias) {
                for (i, plane) in g.chunks(hw).enumerate() {
                    db[i % c] += plane.iter().sum::<f64>();
                }
            }
        }
        Op::Add { a, b } => {
            acc_with(nodes, grads, a, g, |_, gv| gv);
            acc_with(nodes, grads, b, g, |_, gv| gv);
        }
        Op::Sub { a, b } => {
            acc_with(nodes, grads, a, g, |_, gv| gv);
            acc_with(nodes, grads, b, g, |_, gv| -gv);
        }
        Op::Mul { a, b } => {
            let (av, bv) = (&nodes[a].value, &nodes[b].value);
            acc_with(nodes, grads, a, g, |i, gv| gv * bv[i]);
            acc_with(nodes, grads, b, g, |i, gv| gv * av[i]);
        }
        Op::Scale { x, s } => acc_with(nodes, grads, x, g, |_, gv| gv * s),
        Op::AddScalar { x } | Op::Reshape { x } => acc_with(nodes, grads, x, g, |_, gv| gv),
        Op::Relu { x } => {
            let xv = &nodes[x].value;
            acc_with(nodes, grads, x, g, |i, gv| if xv[i] > 0.0 { gv } else { 0.0 });
        }
        Op::Sigmoid { x } => acc_with(nodes, grads, x, g, |i, gv| gv * y[i] * (1.0 - y[i])),
        Op::Log { x } => {
            let xv = &nodes[x].value;
            acc_with(nodes, grads, x, g, |i, gv| if xv[i] > LOG_FLOOR { gv / xv[i] } else { 0.0 });
        }
        Op::Abs { x } => {
            let xv = &nodes[x].value;
            acc_with(nodes, grads, x, g, |i, gv| gv * sign(xv[i]));
        }
        Op::Clamp { x, lo, hi } => {
            let xv = &nodes[x].value;
            acc_with(nodes, grads, x, g, |i, gv| if xv[i] >= lo && xv[i] <= hi { gv } else { 0.0 });
        }
        Op::Softmax { x, cols, temperature } => {
            let mut dx = vec![0.0; g.len()];
            for ((d, gr), yr) in dx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..cols {
                    d[j] = yr[j] * (gr[j] - dot) / temperature;
                }
            }
            acc_with(nodes, grads, x, &dx, |_, v| v);
        }
        Op::LogSoftmax { x, cols, temperature } => {
            let mut dx = vec![0.0; g.len()];
            for ((d, gr), lr) in dx.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                let total: f64 = gr.iter().sum();
                for j in 0..cols {
                    d[j] = (gr[j] - lr[j].exp() * total) / temperature;
                }
            }
            acc_with(nodes, grads, x, &dx, |_, v| v);
        }
        Op::Sum { x } => {
            if let Some(dx) = slot(nodes, grads, x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean { x } => {
            if let Some(dx) = slot(nodes, grads, x) {
                let s = g[0] / dx.len() as f64;
                dx.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::Conv2d { x, k, g: geo } => {
            let (xv, kv) = (&nodes[x].value, &nodes[k].value);
            let need_x = nodes[x].requires_grad;
            let need_k = nodes[k].requires_grad;
            let mut dx = vec![0.0; if need_x { xv.len() } else { 0 }];
            let mut dk = vec![0.0; if need_k { kv.len() } else { 0 }];
            let mut o = 0;
            for n in 0..geo.n {
                for f in 0..geo.f {
                    for oy in 0..geo.oh {
                        for ox in 0..geo.ow {
                            let gv = g[o];
                            o += 1;
                            if gv == 0.0 {
                                continue;
                            }
                            for c in 0..geo.c {
                                for i in 0..geo.kh {
                                    let iy = (oy * geo.stride + i) as isize - geo.pad as isize;
                                    if iy < 0 || iy >= geo.h as isize {
                                        continue;
                                    }
                                    for j in 0..geo.kw {
                                        let ix = (ox * geo.stride + j) as isize - geo.pad as isize;
                                        if ix < 0 || ix >= geo.w as isize {
                                            continue;
                                        }
                                        let xi = ((n * geo.c + c) * geo.h + iy as usize) * geo.w + ix as usize;
                                        let ki = ((f * geo.c + c) * geo.kh + i) * geo.kw + j;
                                        if need_x {
                                            dx[xi] += gv * kv[ki];
                                        }
                                        if need_k {
                                            dk[ki] += gv * xv[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if need_x {
                acc_with(nodes, grads, x, &dx, |_, v| v);
            }
            if need_k {
                acc_with(nodes, grads, k, &dk, |_, v| v);
            }
        }
        Op::AvgPool { x, hw } => {
            let inv = 1.0 / hw as f64;
            acc_with(nodes, grads, x, &vec![0.0; nodes[x].value.len()], |i, _| g[i / hw] * inv);
        }
        Op::Dropout { x, ref mask } => acc_with(nodes, grads, x, g, |i, gv| gv * mask[i]),
        Op::Gather { x, cols, ref idx } => {
            if let Some(dx) = slot(nodes, grads, x) {
                for (r, &j) in idx.iter().enumerate() {
                    dx[r * cols + j] += g[r];
                }
            }
        }
        Op::GroupMean { x, cols, groups } => {
            let size = cols / groups;
            let inv = 1.0 / size as f64;
            acc_with(nodes, grads, x, &vec![0.0; nodes[x].value.len()], |i, _| {
                let (r, c) = (i / cols, i % cols);
                g[r * groups + c / size] * inv
            });
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
