//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation during the forward pass; calling
//! [`Tape::backward`] on a scalar output walks the recorded ops in exact
//! reverse order and accumulates analytic gradients for every trainable
//! leaf. Tapes are single-threaded; independent training tasks each own
//! their tape and may run concurrently.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{reduce_to_shape, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Neg(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    ClampMin(usize, f64),
    Scale(usize, f64),
    AddScalar(usize),
    Sum(usize),
    SumAxis(usize, usize),
    Reshape(usize),
    SelectCols(usize, Arc<[usize]>),
    MergeCols {
        left: usize,
        left_idx: Arc<[usize]>,
        right: usize,
        right_idx: Arc<[usize]>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
    needs_grad: bool,
}

/// Records operations for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients of one backward pass, indexed by tape handle.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or a zero tensor of its shape when `v` lies on no
    /// path to the differentiated output.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        self.grads
            .get(v.id)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A trainable leaf; backward will report its gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true, true)
    }

    /// A constant; no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, trainable: bool, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            trainable,
            needs_grad,
        });
        Var { tape: self, id }
    }

    fn value_of(&self, id: usize) -> Tensor {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Reverse pass from a one-element output. Visits ops in exact reverse
    /// of recording order and returns analytic gradients for all leaves.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let out_node = &nodes[output.id];
        if out_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                out_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Tensor::ones(out_node.value.shape()));

        for id in (0..=output.id).rev() {
            if !nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].clone() else { continue };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            match &nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, reduce_to_shape(&g, val(*a).shape())?);
                    accumulate(&mut grads, *b, reduce_to_shape(&g, val(*b).shape())?);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, reduce_to_shape(&g, val(*a).shape())?);
                    accumulate(&mut grads, *b, reduce_to_shape(&g.neg(), val(*b).shape())?);
                }
                Op::Mul(a, b) => {
                    let ga = reduce_to_shape(&g.mul(val(*b))?, val(*a).shape())?;
                    let gb = reduce_to_shape(&g.mul(val(*a))?, val(*b).shape())?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    // d(a/b)/da = 1/b ; d(a/b)/db = -a/b^2
                    let ga = reduce_to_shape(&g.div(val(*b))?, val(*a).shape())?;
                    let b2 = val(*b).mul(val(*b))?;
                    let gb_full = g.mul(val(*a))?.div(&b2)?.neg();
                    let gb = reduce_to_shape(&gb_full, val(*b).shape())?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&val(*b).transpose()?)?;
                    let gb = val(*a).transpose()?.matmul(&g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Neg(a) => accumulate(&mut grads, *a, g.neg()),
                Op::Relu(a) => {
                    let mask = val(*a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, g.mul(&mask)?);
                }
                Op::Tanh(a) => {
                    // uses the output value: d tanh = 1 - tanh^2
                    let y = &nodes[id].value;
                    let dy = y.map(|v| 1.0 - v * v);
                    accumulate(&mut grads, *a, g.mul(&dy)?);
                }
                Op::Exp(a) => {
                    let y = &nodes[id].value;
                    accumulate(&mut grads, *a, g.mul(y)?);
                }
                Op::Ln(a) => {
                    accumulate(&mut grads, *a, g.div(val(*a))?);
                }
                Op::Sqrt(a) => {
                    let y = &nodes[id].value;
                    let dy = y.map(|v| 0.5 / v);
                    accumulate(&mut grads, *a, g.mul(&dy)?);
                }
                Op::ClampMin(a, c) => {
                    let c = *c;
                    let mask = val(*a).map(|v| if v > c { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, g.mul(&mask)?);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g.clone()),
                Op::Sum(a) => {
                    let gv = g.item()?;
                    accumulate(&mut grads, *a, Tensor::ones(val(*a).shape()).scale(gv));
                }
                Op::SumAxis(a, axis) => {
                    // g has the keepdim shape; broadcasting restores it.
                    let ones = Tensor::ones(val(*a).shape());
                    let _ = axis;
                    accumulate(&mut grads, *a, ones.mul(&g)?);
                }
                Op::Reshape(a) => {
                    accumulate(&mut grads, *a, g.reshape(val(*a).shape().to_vec())?);
                }
                Op::SelectCols(a, idx) => {
                    let width = val(*a).shape()[1];
                    accumulate(&mut grads, *a, g.scatter_cols(idx, width)?);
                }
                Op::MergeCols {
                    left,
                    left_idx,
                    right,
                    right_idx,
                } => {
                    accumulate(&mut grads, *left, g.select_cols(left_idx)?);
                    accumulate(&mut grads, *right, g.select_cols(right_idx)?);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    grads[id] = Some(match grads[id].take() {
        Some(prev) => prev.add(&g).expect("gradient shapes agree"),
        None => g,
    });
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn is_trainable(&self) -> bool {
        self.tape.nodes.borrow()[self.id].trainable
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id);
        self.tape.push(value, op, false, needs)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
        let needs = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(value, op, false, needs)
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().add(&other.value()).expect("add shapes");
        self.binary(other, v, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().sub(&other.value()).expect("sub shapes");
        self.binary(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().mul(&other.value()).expect("mul shapes");
        self.binary(other, v, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().div(&other.value()).expect("div shapes");
        self.binary(other, v, Op::Div(self.id, other.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().matmul(&other.value()).expect("matmul shapes");
        self.binary(other, v, Op::MatMul(self.id, other.id))
    }

    pub fn neg(self) -> Var<'t> {
        self.unary(self.value().neg(), Op::Neg(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(self.value().map(|v| v.max(0.0)), Op::Relu(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(self.value().map(f64::tanh), Op::Tanh(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(self.value().map(f64::ln), Op::Ln(self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(self.value().map(f64::sqrt), Op::Sqrt(self.id))
    }

    pub fn clamp_min(self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v.max(c)), Op::ClampMin(self.id, c))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(self.value().scale(c), Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(self.value().add_scalar(c), Op::AddScalar(self.id))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum_all());
        self.unary(v, Op::Sum(self.id))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Row/column sum of a rank-2 value, keeping the reduced axis as 1.
    pub fn sum_axis(self, axis: usize) -> Var<'t> {
        let v = self.value().sum_axis(axis).expect("sum_axis shape");
        self.unary(v, Op::SumAxis(self.id, axis))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Var<'t> {
        let v = self.value().reshape(shape).expect("reshape numel");
        self.unary(v, Op::Reshape(self.id))
    }

    pub fn select_cols(self, idx: Arc<[usize]>) -> Var<'t> {
        let v = self.value().select_cols(&idx).expect("select_cols range");
        self.unary(v, Op::SelectCols(self.id, idx))
    }

    /// Interleave the columns of `self` and `right` into a tensor of
    /// `width` columns; `left_idx`/`right_idx` must partition `0..width`.
    pub fn merge_cols(
        self,
        left_idx: Arc<[usize]>,
        right: Var<'t>,
        right_idx: Arc<[usize]>,
        width: usize,
    ) -> Var<'t> {
        debug_assert_eq!(left_idx.len() + right_idx.len(), width);
        let l = self.value().scatter_cols(&left_idx, width).expect("merge left");
        let r = right.value().scatter_cols(&right_idx, width).expect("merge right");
        let v = l.add(&r).expect("merge add");
        self.binary(
            right,
            v,
            Op::MergeCols {
                left: self.id,
                left_idx,
                right: right.id,
                right_idx,
            },
        )
    }

    pub fn backward(self) -> Result<Gradients> {
        self.tape.backward(self)
    }
}

/// Numerically stable row-wise log-softmax of `x / temperature`.
///
/// The per-row maximum is subtracted as a constant; softmax shift
/// invariance keeps the gradient exact.
pub fn log_softmax_rows<'t>(tape: &'t Tape, x: Var<'t>, temperature: f64) -> Var<'t> {
    let scaled = x.scale(1.0 / temperature);
    let m = tape.constant(scaled.value().row_max().expect("rank-2 input"));
    let shifted = scaled.sub(m);
    let lse = shifted.exp().sum_axis(1).ln();
    shifted.sub(lse)
}

/// Row-wise cosine similarity of two `[n, d]` values, shape `[n, 1]`.
/// Norms are clamped at `eps` to guard zero vectors.
pub fn row_cosine<'t>(a: Var<'t>, b: Var<'t>, eps: f64) -> Var<'t> {
    let dot = a.mul(b).sum_axis(1);
    let na = a.mul(a).sum_axis(1).sqrt().clamp_min(eps);
    let nb = b.mul(b).sum_axis(1).sqrt().clamp_min(eps);
    dot.div(na.mul(nb))
}
