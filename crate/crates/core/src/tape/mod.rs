//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles in
//! execution order, so node ids are already a topological order. Calling
//! [`Tape::backward`] walks the tape once in reverse, summing the
//! contributions of every consumer into each input, and then adds the result
//! into the persistent gradient buffers of the leaves that require one.
//!
//! ```
//! use advdistill::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let w = tape.param(&Tensor::scalar(3.0));
//! let loss = w.mul(w).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap().data(), &[6.0]);
//! ```

mod backward;
pub(crate) mod gemm;
mod ops;

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use ops::LOG_FLOOR;

/// Train/eval switch for mode-dependent operations (dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    AddRow { x: usize, bias: usize, cols: usize },
    AddChannel { x: usize, bias: usize, c: usize, hw: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, s: f64 },
    AddScalar { x: usize },
    Relu { x: usize },
    Sigmoid { x: usize },
    Log { x: usize },
    Abs { x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    Softmax { x: usize, cols: usize, temperature: f64 },
    LogSoftmax { x: usize, cols: usize, temperature: f64 },
    Sum { x: usize },
    Mean { x: usize },
    Reshape { x: usize },
    Conv2d { x: usize, k: usize, g: ConvGeom },
    AvgPool { x: usize, hw: usize },
    Dropout { x: usize, mask: Vec<f64> },
    Gather { x: usize, cols: usize, idx: Vec<usize> },
    GroupMean { x: usize, cols: usize, groups: usize },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub requires_grad: bool,
    pub op: Op,
    pub grad: Option<Vec<f64>>,
}

/// Recording of one forward computation. Confined to a single thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records `t`; the leaf tracks gradients iff `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records `t` as a gradient-tracking leaf regardless of its flag.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Records `t` as a leaf that never receives gradients.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub(crate) fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { shape, value, requires_grad, op, grad: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    pub(crate) fn nodes(&self) -> std::cell::Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    /// Back-propagates from a scalar `loss`, adding `∂loss/∂leaf` into the
    /// gradient buffer of every gradient-tracking leaf. Repeated calls
    /// accumulate.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        self.check_owner(loss)?;
        let local = {
            let nodes = self.nodes.borrow();
            let root = &nodes[loss.id];
            if root.value.len() != 1 {
                return Err(Error::Contract(format!(
                    "backward needs a scalar loss, got shape {:?}",
                    root.shape
                )));
            }
            backward::run(&nodes, loss.id)
        };
        let mut nodes = self.nodes.borrow_mut();
        for (node, g) in nodes.iter_mut().zip(local) {
            if let (Op::Leaf, true, Some(g)) = (&node.op, node.requires_grad, g) {
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.id];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.shape.clone(), g.clone()).expect("gradient shape mirrors value shape")
        })
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn check_owner(&self, v: Var<'_>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(Error::Contract("variable belongs to a different tape".into()))
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Runs `f` over the forward values without copying.
    pub fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// First element; the whole value for scalars.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    pub fn backward(self) -> Result<()> {
        self.tape.backward(self)
    }

    /// Gradient accumulated on this leaf.
    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }
}

#[cfg(test)]
mod tests;
