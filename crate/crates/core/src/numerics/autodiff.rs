//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and returns a
//! [`Gradients`] table. The tape is not consumed: backward may be called again
//! (each call starts from fresh zero buffers), and new operations may still be
//! recorded afterwards. One tape per forward pass; tapes are `Send` but not
//! shared between threads.
//!
//! Nodes whose inputs are all untracked constants are marked as not requiring
//! a gradient and are skipped during the reverse sweep.

use std::cell::{Ref, RefCell};
use std::fmt;

use crate::error::{Error, Result};

use super::ops::{self, Broadcast};
use super::tensor::{Real, Tensor};

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize, Broadcast),
    Mul(usize, usize, Broadcast),
    Scale(usize, F),
    AddScalar(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Gelu(usize),
    Sigmoid(usize),
    Slice {
        x: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<usize>,
        axis: usize,
    },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    /// Gradient w.r.t. pred is `coeff[i] * upstream`.
    PointwiseLoss {
        pred: usize,
        coeff: Vec<F>,
    },
    CrossEntropy {
        logits: usize,
        classes: Vec<usize>,
        probs: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<F: Real = f32> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Real> fmt::Debug for Tape<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a recorded value.
#[derive(Clone, Copy)]
pub struct Var<'t, F: Real = f32> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F: Real> fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, var: Var<'_, F>) -> Option<&Tensor<F>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_, F>) -> Option<Tensor<F>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tracked input: gradients are reported for it after backward.
    pub fn var(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked input.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&self, value: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value_ref(&self, id: usize) -> Ref<'_, Tensor<F>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a single-element tensor.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<Gradients<F>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![F::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(id);
            let Some(g) = upper[0].as_ref() else { continue };
            backprop(&nodes, node, g, lower);
        }

        // Tracked leaves always get a buffer, even when unreachable.
        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| match (&n.op, g) {
                (_, Some(g)) if n.requires_grad => Some(Tensor::new(n.value.shape(), g)),
                (Op::Leaf, None) if n.requires_grad => Some(Ok(Tensor::zeros(n.value.shape()))),
                _ => None,
            })
            .map(Option::transpose)
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }
}

fn slot<'g, F: Real>(lower: &'g mut [Option<Vec<F>>], id: usize, len: usize) -> &'g mut Vec<F> {
    lower[id].get_or_insert_with(|| vec![F::zero(); len])
}

fn accumulate<F: Real>(
    nodes: &[Node<F>],
    lower: &mut [Option<Vec<F>>],
    id: usize,
    contrib: impl Fn(usize) -> F,
) {
    if !nodes[id].requires_grad {
        return;
    }
    let len = nodes[id].value.numel();
    let buf = slot(lower, id, len);
    for (i, b) in buf.iter_mut().enumerate() {
        *b = *b + contrib(i);
    }
}

/// Accumulate a broadcast operand's gradient: `full` has the output size.
fn accumulate_reduced<F: Real>(
    nodes: &[Node<F>],
    lower: &mut [Option<Vec<F>>],
    id: usize,
    full: &[F],
) {
    if !nodes[id].requires_grad {
        return;
    }
    let len = nodes[id].value.numel();
    let buf = slot(lower, id, len);
    for chunk in full.chunks_exact(len) {
        for (b, &v) in buf.iter_mut().zip(chunk) {
            *b = *b + v;
        }
    }
}

fn backprop<F: Real>(nodes: &[Node<F>], node: &Node<F>, g: &[F], lower: &mut [Option<Vec<F>>]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = nodes[*a].value.dims2().expect("matmul operand");
            let n = nodes[*b].value.shape()[1];
            if nodes[*a].requires_grad {
                let buf = slot(lower, *a, m * k);
                ops::gemm_acc(m, n, k, g, false, nodes[*b].value.data(), true, buf);
            }
            if nodes[*b].requires_grad {
                let buf = slot(lower, *b, k * n);
                ops::gemm_acc(k, m, n, nodes[*a].value.data(), true, g, false, buf);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = nodes[*a].value.dims2().expect("transpose operand");
            // out is c×r; input index (i, j) = i*c + j maps to out j*r + i.
            accumulate(nodes, lower, *a, |idx| g[(idx % c) * r + idx / c]);
        }
        Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
            let sign = if matches!(node.op, Op::Sub(..)) {
                -F::one()
            } else {
                F::one()
            };
            match kind {
                Broadcast::Same => {
                    accumulate(nodes, lower, *a, |i| g[i]);
                    accumulate(nodes, lower, *b, |i| sign * g[i]);
                }
                Broadcast::Rhs => {
                    accumulate(nodes, lower, *a, |i| g[i]);
                    let neg: Vec<F> = g.iter().map(|&v| sign * v).collect();
                    accumulate_reduced(nodes, lower, *b, &neg);
                }
                Broadcast::Lhs => {
                    accumulate_reduced(nodes, lower, *a, g);
                    accumulate(nodes, lower, *b, |i| sign * g[i]);
                }
            }
        }
        Op::Mul(a, b, kind) => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            match kind {
                Broadcast::Same => {
                    accumulate(nodes, lower, *a, |i| g[i] * bv[i]);
                    accumulate(nodes, lower, *b, |i| g[i] * av[i]);
                }
                Broadcast::Rhs => {
                    let nb = bv.len();
                    accumulate(nodes, lower, *a, |i| g[i] * bv[i % nb]);
                    if nodes[*b].requires_grad {
                        let full: Vec<F> = g.iter().zip(av).map(|(&gi, &ai)| gi * ai).collect();
                        accumulate_reduced(nodes, lower, *b, &full);
                    }
                }
                Broadcast::Lhs => {
                    let na = av.len();
                    accumulate(nodes, lower, *b, |i| g[i] * av[i % na]);
                    if nodes[*a].requires_grad {
                        let full: Vec<F> = g.iter().zip(bv).map(|(&gi, &bi)| gi * bi).collect();
                        accumulate_reduced(nodes, lower, *a, &full);
                    }
                }
            }
        }
        Op::Scale(a, c) => accumulate(nodes, lower, *a, |i| *c * g[i]),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(nodes, lower, *a, |i| g[i]),
        Op::Softmax { x, axis } => {
            if !nodes[*x].requires_grad {
                return;
            }
            let (outer, len, inner) = ops::axis_split(out.shape(), *axis).expect("softmax axis");
            let y = out.data();
            let mut dx = vec![F::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = F::zero();
                    for j in 0..len {
                        let p = base + j * inner;
                        dot = dot + g[p] * y[p];
                    }
                    for j in 0..len {
                        let p = base + j * inner;
                        dx[p] = y[p] * (g[p] - dot);
                    }
                }
            }
            accumulate(nodes, lower, *x, |i| dx[i]);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let cols = nodes[*gain].value.numel();
            let gv = nodes[*gain].value.data();
            if nodes[*gain].requires_grad {
                let full: Vec<F> = g.iter().zip(xhat).map(|(&a, &b)| a * b).collect();
                accumulate_reduced(nodes, lower, *gain, &full);
            }
            accumulate_reduced(nodes, lower, *bias, g);
            if nodes[*x].requires_grad {
                let n = F::from_f64(cols as f64);
                let mut dx = vec![F::zero(); g.len()];
                for (r, &rs) in rstd.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    let gr = &g[span.clone()];
                    let hr = &xhat[span.clone()];
                    let mut mean_d = F::zero();
                    let mut mean_dh = F::zero();
                    for c in 0..cols {
                        let d = gr[c] * gv[c];
                        mean_d = mean_d + d;
                        mean_dh = mean_dh + d * hr[c];
                    }
                    mean_d = mean_d / n;
                    mean_dh = mean_dh / n;
                    for c in 0..cols {
                        let d = gr[c] * gv[c];
                        dx[r * cols + c] = rs * (d - mean_d - hr[c] * mean_dh);
                    }
                }
                accumulate(nodes, lower, *x, |i| dx[i]);
            }
        }
        Op::Gelu(a) => {
            let xv = nodes[*a].value.data();
            accumulate(nodes, lower, *a, |i| g[i] * ops::gelu_grad_scalar(xv[i]));
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            accumulate(nodes, lower, *a, |i| g[i] * y[i] * (F::one() - y[i]));
        }
        Op::Slice { x, axis, start } => {
            if !nodes[*x].requires_grad {
                return;
            }
            let src_shape = nodes[*x].value.shape();
            let (outer, full, inner) = ops::axis_split(src_shape, *axis).expect("slice axis");
            let len = out.shape()[*axis];
            let buf = slot(lower, *x, outer * full * inner);
            for o in 0..outer {
                let dst = o * full * inner + start * inner;
                let src = o * len * inner;
                for k in 0..len * inner {
                    buf[dst + k] = buf[dst + k] + g[src + k];
                }
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = ops::axis_split(out.shape(), *axis).expect("concat axis");
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.shape()[*axis];
                if nodes[p].requires_grad {
                    let buf = slot(lower, p, outer * len * inner);
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        let dst = o * len * inner;
                        for k in 0..len * inner {
                            buf[dst + k] = buf[dst + k] + g[src + k];
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Sum(a) => accumulate(nodes, lower, *a, |_| g[0]),
        Op::Mean(a) => {
            let n = F::from_f64(nodes[*a].value.numel() as f64);
            accumulate(nodes, lower, *a, |_| g[0] / n);
        }
        Op::PointwiseLoss { pred, coeff } => {
            accumulate(nodes, lower, *pred, |i| g[0] * coeff[i]);
        }
        Op::CrossEntropy {
            logits,
            classes,
            probs,
        } => {
            let c = nodes[*logits].value.shape()[1];
            let n = F::from_f64(classes.len() as f64);
            accumulate(nodes, lower, *logits, |i| {
                let onehot = if classes[i / c] == i % c {
                    F::one()
                } else {
                    F::zero()
                };
                g[0] * (probs[i] - onehot) / n
            });
        }
    }
}

impl<'t, F: Real> Var<'t, F> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(self.id).shape().to_vec()
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor<F> {
        self.tape.value_ref(self.id).clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<F>) -> R) -> R {
        f(&self.tape.value_ref(self.id))
    }

    pub fn item(&self) -> F {
        self.tape.value_ref(self.id).data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t, F>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands recorded on different tapes"))
        }
    }

    fn unary(self, value: Tensor<F>, op: Op<F>) -> Var<'t, F> {
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, rhs: Var<'t, F>) -> Result<Var<'t, F>> {
        self.same_tape(&rhs)?;
        let value = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(rhs.id);
            ops::matmul(&a, &b)?
        };
        let rg = self.tape.rg(&[self.id, rhs.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, rhs.id), rg))
    }

    pub fn transpose(self) -> Result<Var<'t, F>> {
        let value = ops::transpose(&self.tape.value_ref(self.id))?;
        Ok(self.unary(value, Op::Transpose(self.id)))
    }

    fn binary(
        self,
        rhs: Var<'t, F>,
        name: &'static str,
        f: impl Fn(F, F) -> F,
        make: impl FnOnce(usize, usize, Broadcast) -> Op<F>,
    ) -> Result<Var<'t, F>> {
        self.same_tape(&rhs)?;
        let (value, kind) = {
            let a = self.tape.value_ref(self.id);
            let b = self.tape.value_ref(rhs.id);
            let kind = ops::broadcast_kind(name, a.shape(), b.shape())?;
            (ops::zip_broadcast(name, &a, &b, f)?, kind)
        };
        let rg = self.tape.rg(&[self.id, rhs.id]);
        Ok(self.tape.push(value, make(self.id, rhs.id, kind), rg))
    }

    /// Elementwise sum; the shorter operand broadcasts over leading axes.
    pub fn add(self, rhs: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, rhs: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, rhs: Var<'t, F>) -> Result<Var<'t, F>> {
        self.binary(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(self, c: F) -> Var<'t, F> {
        let value = self.tape.value_ref(self.id).map(|v| v * c);
        self.unary(value, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: F) -> Var<'t, F> {
        let value = self.tape.value_ref(self.id).map(|v| v + c);
        self.unary(value, Op::AddScalar(self.id))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t, F>> {
        let value = ops::softmax(&self.tape.value_ref(self.id), axis)?;
        Ok(self.unary(value, Op::Softmax { x: self.id, axis }))
    }

    /// Normalizes over the last axis, then applies `gain`/`bias`.
    pub fn layer_norm(self, gain: Var<'t, F>, bias: Var<'t, F>, eps: F) -> Result<Var<'t, F>> {
        self.same_tape(&gain)?;
        self.same_tape(&bias)?;
        let (value, xhat, rstd) = {
            let x = self.tape.value_ref(self.id);
            let gv = self.tape.value_ref(gain.id);
            let bv = self.tape.value_ref(bias.id);
            let cols = *x.shape().last().expect("non-empty shape");
            if gv.numel() != cols || bv.numel() != cols {
                return Err(Error::shape("layer_norm", x.shape(), gv.shape()));
            }
            let (xhat, rstd) = ops::layer_norm_stats(x.data(), cols, eps);
            let data = xhat
                .iter()
                .enumerate()
                .map(|(i, &h)| h * gv.data()[i % cols] + bv.data()[i % cols])
                .collect();
            (Tensor::new(x.shape(), data)?, xhat, rstd)
        };
        let rg = self.tape.rg(&[self.id, gain.id, bias.id]);
        let op = Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            xhat,
            rstd,
        };
        Ok(self.tape.push(value, op, rg))
    }

    pub fn gelu(self) -> Var<'t, F> {
        let value = ops::gelu(&self.tape.value_ref(self.id));
        self.unary(value, Op::Gelu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t, F> {
        let value = ops::sigmoid(&self.tape.value_ref(self.id));
        self.unary(value, Op::Sigmoid(self.id))
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, F>> {
        let value = ops::slice(&self.tape.value_ref(self.id), axis, start, len)?;
        Ok(self.unary(
            value,
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
        ))
    }

    pub fn concat(parts: &[Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        for p in parts {
            first.same_tape(p)?;
        }
        let tape = first.tape;
        let value = {
            let refs: Vec<_> = parts.iter().map(|p| tape.value_ref(p.id)).collect();
            let tensors: Vec<&Tensor<F>> = refs.iter().map(|r| &**r).collect();
            ops::concat(&tensors, axis)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.rg(&ids);
        Ok(tape.push(value, Op::Concat { parts: ids, axis }, rg))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, F>> {
        let value = self.tape.value_ref(self.id).clone().reshape(shape)?;
        Ok(self.unary(value, Op::Reshape(self.id)))
    }

    pub fn sum(self) -> Var<'t, F> {
        let value = Tensor::scalar(self.tape.value_ref(self.id).sum());
        self.unary(value, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t, F> {
        let value = {
            let v = self.tape.value_ref(self.id);
            Tensor::scalar(v.sum() / F::from_f64(v.numel() as f64))
        };
        self.unary(value, Op::Mean(self.id))
    }

    /// Mean squared error against constant `target`. With a `mask`, entries
    /// are weighted by it and the mean is taken over the mask's total weight.
    pub fn mse_loss(self, target: &Tensor<F>, mask: Option<&Tensor<F>>) -> Result<Var<'t, F>> {
        let (value, coeff) = {
            let p = self.tape.value_ref(self.id);
            if p.shape() != target.shape() {
                return Err(Error::shape("mse_loss", p.shape(), target.shape()));
            }
            if let Some(m) = mask {
                if m.shape() != p.shape() {
                    return Err(Error::shape("mse_loss mask", p.shape(), m.shape()));
                }
            }
            let weight = |i: usize| mask.map_or(F::one(), |m| m.data()[i]);
            let denom = match mask {
                Some(m) => m.sum(),
                None => F::from_f64(p.numel() as f64),
            };
            if denom <= F::zero() {
                return Err(Error::contract("mse_loss mask selects nothing"));
            }
            let mut total = F::zero();
            let mut coeff = Vec::with_capacity(p.numel());
            for (i, (&a, &b)) in p.data().iter().zip(target.data()).enumerate() {
                let d = (a - b) * weight(i);
                total = total + d * (a - b);
                coeff.push(F::from_f64(2.0) * d / denom);
            }
            (Tensor::scalar(total / denom), coeff)
        };
        Ok(self.unary(
            value,
            Op::PointwiseLoss {
                pred: self.id,
                coeff,
            },
        ))
    }

    /// Mean absolute error against constant `target`.
    pub fn l1_loss(self, target: &Tensor<F>) -> Result<Var<'t, F>> {
        let (value, coeff) = {
            let p = self.tape.value_ref(self.id);
            if p.shape() != target.shape() {
                return Err(Error::shape("l1_loss", p.shape(), target.shape()));
            }
            let n = F::from_f64(p.numel() as f64);
            let mut total = F::zero();
            let coeff = p
                .data()
                .iter()
                .zip(target.data())
                .map(|(&a, &b)| {
                    total = total + (a - b).abs();
                    if a > b {
                        F::one() / n
                    } else if a < b {
                        -F::one() / n
                    } else {
                        F::zero()
                    }
                })
                .collect();
            (Tensor::scalar(total / n), coeff)
        };
        Ok(self.unary(
            value,
            Op::PointwiseLoss {
                pred: self.id,
                coeff,
            },
        ))
    }

    /// Mean over rows of `-log softmax(logits)[row, class]` for `[N×C]` logits.
    pub fn cross_entropy(self, classes: &[usize]) -> Result<Var<'t, F>> {
        let (value, probs) = {
            let l = self.tape.value_ref(self.id);
            let (n, c) = l.dims2()?;
            if classes.len() != n {
                return Err(Error::shape("cross_entropy", l.shape(), &[classes.len()]));
            }
            if let Some(&bad) = classes.iter().find(|&&k| k >= c) {
                return Err(Error::Range(format!("class index {bad} >= {c}")));
            }
            let probs = ops::softmax(&l, 1)?;
            let mut total = F::zero();
            for (r, &k) in classes.iter().enumerate() {
                let row = l.row(r);
                let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                let lse = row.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
                total = total + lse - row[k];
            }
            (
                Tensor::scalar(total / F::from_f64(n as f64)),
                probs.into_data(),
            )
        };
        Ok(self.unary(
            value,
            Op::CrossEntropy {
                logits: self.id,
                classes: classes.to_vec(),
                probs,
            },
        ))
    }
}
