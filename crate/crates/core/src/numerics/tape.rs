//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Node ids are
//! assigned in creation order, so reverse id order is a valid topological
//! order and [`Tape::backward`] visits each node once.

use std::cell::RefCell;
use std::rc::Rc;

use super::kernels::{self, reduce_to};
use super::{Tensor, TensorError};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Conv2d { x: usize, w: usize, stride: usize, pad: usize },
    Tanh(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Elu(usize),
    Exp(usize),
    Square(usize),
    Softmax(usize, usize),
    LogSoftmax(usize, usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    CrossEntropy { logits: usize, labels: Vec<usize> },
    Gather { a: usize, idx: Vec<usize> },
    IndexRows { a: usize, idx: Rc<Vec<usize>> },
    SegmentSum { a: usize, seg: Rc<Vec<usize>> },
    SegmentSoftmax { a: usize, seg: Rc<Vec<usize>> },
    ScaleRows { a: usize, w: usize },
    SliceRows { a: usize, start: usize },
    ConcatRows(Vec<usize>),
    PadCols { a: usize, cols: usize },
    Reshape(usize),
    Clamp { a: usize, lo: f64, hi: f64 },
    Minimum(usize, usize),
    Mask { a: usize, mask: Rc<Tensor> },
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.id]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    fn record(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let needs = parents.iter().any(|&p| self.needs(p));
        self.push(value, op, needs)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: root.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut acc = |pid: usize, t: Tensor| {
                if !nodes[pid].needs_grad {
                    return;
                }
                match &mut grads[pid] {
                    Some(existing) => {
                        for (e, v) in existing.data_mut().iter_mut().zip(t.data()) {
                            *e += v;
                        }
                    }
                    slot @ None => *slot = Some(t),
                }
            };
            let val = |pid: usize| -> &Tensor { &nodes[pid].value };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    acc(*b, reduce_to(&g, val(*b).shape()));
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, reduce_to(&g, val(*b).shape()).map(|v| -v));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let ga = kernels::broadcast_binary("mul", &g, bv, |x, y| x * y)?;
                    let gb_full = kernels::broadcast_binary("mul", &g, av, |x, y| x * y);
                    // g and a share a shape, so this broadcast is elementwise.
                    acc(*b, reduce_to(&gb_full?, bv.shape()));
                    acc(*a, ga);
                }
                Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if nodes[*a].needs_grad {
                        acc(*a, kernels::matmul(&g, &kernels::transpose(bv)?)?);
                    }
                    if nodes[*b].needs_grad {
                        acc(*b, kernels::matmul(&kernels::transpose(av)?, &g)?);
                    }
                }
                Op::Transpose(a) => acc(*a, kernels::transpose(&g)?),
                Op::Conv2d { x, w, stride, pad } => {
                    let (gx, gw) =
                        kernels::conv2d_backward(val(*x), val(*w), &g, *stride, *pad)?;
                    acc(*x, gx);
                    acc(*w, gw);
                }
                Op::Tanh(a) => acc(*a, zip_map(&g, y, |g, y| g * (1.0 - y * y))),
                Op::Relu(a) => acc(*a, zip_map(&g, val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
                Op::LeakyRelu(a, s) => {
                    acc(*a, zip_map(&g, val(*a), |g, x| if x > 0.0 { g } else { g * s }))
                }
                Op::Elu(a) => {
                    let x = val(*a);
                    let d = Tensor::from_fn(x.shape(), |i| {
                        if x.data()[i] > 0.0 {
                            g.data()[i]
                        } else {
                            g.data()[i] * (y.data()[i] + 1.0)
                        }
                    });
                    acc(*a, d);
                }
                Op::Exp(a) => acc(*a, zip_map(&g, y, |g, y| g * y)),
                Op::Square(a) => acc(*a, zip_map(&g, val(*a), |g, x| 2.0 * g * x)),
                Op::Softmax(a, axis) => {
                    let (outer, len, inner) = kernels::axis_split(y.shape(), *axis)?;
                    let mut d = vec![0.0; y.numel()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |t: usize| (o * len + t) * inner + i;
                            let dot: f64 = (0..len).map(|t| y.data()[idx(t)] * g.data()[idx(t)]).sum();
                            for t in 0..len {
                                d[idx(t)] = y.data()[idx(t)] * (g.data()[idx(t)] - dot);
                            }
                        }
                    }
                    acc(*a, Tensor::new(y.shape().to_vec(), d)?);
                }
                Op::LogSoftmax(a, axis) => {
                    let (outer, len, inner) = kernels::axis_split(y.shape(), *axis)?;
                    let mut d = vec![0.0; y.numel()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |t: usize| (o * len + t) * inner + i;
                            let gs: f64 = (0..len).map(|t| g.data()[idx(t)]).sum();
                            for t in 0..len {
                                d[idx(t)] = g.data()[idx(t)] - y.data()[idx(t)].exp() * gs;
                            }
                        }
                    }
                    acc(*a, Tensor::new(y.shape().to_vec(), d)?);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    acc(*a, Tensor::full(val(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let x = val(*a);
                    acc(*a, Tensor::full(x.shape(), g.data()[0] / x.numel() as f64));
                }
                Op::MeanRows(a) => {
                    let x = val(*a);
                    let (n, d) = (x.shape()[0], x.shape()[1]);
                    let gd = g.data();
                    acc(*a, Tensor::from_fn(x.shape(), |i| gd[i % d] / n as f64));
                }
                Op::CrossEntropy { logits, labels } => {
                    let x = val(*logits);
                    let mut p = kernels::softmax(x, 1)?;
                    let c = x.shape()[1];
                    let scale = g.data()[0] / labels.len() as f64;
                    let pd = p.data_mut();
                    for (r, &l) in labels.iter().enumerate() {
                        pd[r * c + l] -= 1.0;
                    }
                    for v in pd.iter_mut() {
                        *v *= scale;
                    }
                    acc(*logits, p);
                }
                Op::Gather { a, idx } => {
                    let x = val(*a);
                    let mut d = vec![0.0; x.numel()];
                    for (k, &i) in idx.iter().enumerate() {
                        d[i] += g.data()[k];
                    }
                    acc(*a, Tensor::new(x.shape().to_vec(), d)?);
                }
                Op::IndexRows { a, idx } => {
                    let x = val(*a);
                    let w = x.shape()[1];
                    let mut d = vec![0.0; x.numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..w {
                            d[i * w + c] += g.data()[r * w + c];
                        }
                    }
                    acc(*a, Tensor::new(x.shape().to_vec(), d)?);
                }
                Op::SegmentSum { a, seg } => {
                    let x = val(*a);
                    let w = x.shape()[1];
                    let d = Tensor::from_fn(x.shape(), |i| g.data()[seg[i / w] * w + i % w]);
                    acc(*a, d);
                }
                Op::SegmentSoftmax { a, seg } => {
                    let n = seg.iter().copied().max().map_or(0, |m| m + 1);
                    let mut dots = vec![0.0; n];
                    for (p, &s) in seg.iter().enumerate() {
                        dots[s] += y.data()[p] * g.data()[p];
                    }
                    let d = Tensor::from_fn(y.shape(), |p| y.data()[p] * (g.data()[p] - dots[seg[p]]));
                    acc(*a, d);
                }
                Op::ScaleRows { a, w } => {
                    let (x, wv) = (val(*a), val(*w));
                    let cols = x.shape()[1];
                    let ga = Tensor::from_fn(x.shape(), |i| g.data()[i] * wv.data()[i / cols]);
                    let gw = Tensor::from_fn(wv.shape(), |r| {
                        (0..cols).map(|c| g.data()[r * cols + c] * x.data()[r * cols + c]).sum()
                    });
                    acc(*w, gw);
                    acc(*a, ga);
                }
                Op::SliceRows { a, start } => {
                    let x = val(*a);
                    let w = x.shape()[1];
                    let mut d = vec![0.0; x.numel()];
                    d[start * w..start * w + g.numel()].copy_from_slice(g.data());
                    acc(*a, Tensor::new(x.shape().to_vec(), d)?);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = val(p).numel();
                        let piece = Tensor::new(val(p).shape().to_vec(), g.data()[off..off + n].to_vec())?;
                        off += n;
                        acc(p, piece);
                    }
                }
                Op::PadCols { a, cols } => {
                    let x = val(*a);
                    let w = x.shape()[1];
                    let d = Tensor::from_fn(x.shape(), |i| g.data()[(i / w) * cols + i % w]);
                    acc(*a, d);
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    acc(*a, g.reshape(&shape)?);
                }
                Op::Clamp { a, lo, hi } => acc(
                    *a,
                    zip_map(&g, val(*a), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
                ),
                Op::Minimum(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let ga = Tensor::from_fn(av.shape(), |i| {
                        if av.data()[i] <= bv.data()[i] { g.data()[i] } else { 0.0 }
                    });
                    let gb = Tensor::from_fn(av.shape(), |i| {
                        if av.data()[i] <= bv.data()[i] { 0.0 } else { g.data()[i] }
                    });
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Mask { a, mask } => acc(*a, apply_mask(&g, mask)),
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_fn(x.shape(), |i| f(g.data()[i], x.data()[i]))
}

/// `t` with every position where `mask` is zero replaced by exactly `0.0`.
pub fn apply_mask(t: &Tensor, mask: &Tensor) -> Tensor {
    Tensor::from_fn(t.shape(), |i| {
        if mask.data()[i] != 0.0 {
            t.data()[i]
        } else {
            0.0
        }
    })
}

fn check_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::ShapeMismatch {
            op,
            left: s.to_vec(),
            right: vec![],
        }),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.record(value, op, &[self.id])
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        self.tape.record(value, op, &[self.id, other.id])
    }

    /// `self + other`, `other` broadcast over leading dimensions.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let v = kernels::broadcast_binary("add", &self.value(), &other.value(), |a, b| a + b)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let v = kernels::broadcast_binary("sub", &self.value(), &other.value(), |a, b| a - b)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let v = kernels::broadcast_binary("mul", &self.value(), &other.value(), |a, b| a * b)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.unary(v, Op::Scale(self.id, c))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let v = kernels::matmul(&self.value(), &other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Result<Var<'t>, TensorError> {
        let v = kernels::transpose(&self.value())?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    /// Convolution of `self [N,C,H,W]` with `weight [F,C,k,k]`.
    pub fn conv2d(self, weight: Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>, TensorError> {
        let v = kernels::conv2d(&self.value(), &weight.value(), stride, padding)?;
        Ok(self.binary(
            weight,
            v,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                stride,
                pad: padding,
            },
        ))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().map(f64::tanh);
        self.unary(v, Op::Tanh(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { 0.0 });
        self.unary(v, Op::Relu(self.id))
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { slope * x });
        self.unary(v, Op::LeakyRelu(self.id, slope))
    }

    /// Exponential-linear unit with unit scale.
    pub fn elu(self) -> Var<'t> {
        let v = self.value().map(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.unary(v, Op::Elu(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    pub fn square(self) -> Var<'t> {
        let v = self.value().map(|x| x * x);
        self.unary(v, Op::Square(self.id))
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let v = kernels::softmax(&self.value(), axis)?;
        Ok(self.unary(v, Op::Softmax(self.id, axis)))
    }

    pub fn log_softmax(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let v = kernels::log_softmax(&self.value(), axis)?;
        Ok(self.unary(v, Op::LogSoftmax(self.id, axis)))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let x = self.value();
        let v = Tensor::scalar(x.sum() / x.numel() as f64);
        self.unary(v, Op::Mean(self.id))
    }

    /// Column means of a matrix, `[N,d] -> [1,d]`.
    pub fn mean_rows(self) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        let (n, d) = check_2d("mean_rows", &x)?;
        let mut out = vec![0.0; d];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(&x.data()[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        Ok(self.unary(Tensor::new(vec![1, d], out)?, Op::MeanRows(self.id)))
    }

    /// Mean softmax cross-entropy of `self [B,C]` against class labels.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        let (b, c) = check_2d("cross_entropy", &x)?;
        if labels.len() != b {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: x.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: l,
                bound: c,
            });
        }
        let ls = kernels::log_softmax(&x, 1)?;
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(r, &l)| ls.data()[r * c + l])
            .sum::<f64>()
            / b as f64;
        Ok(self.unary(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Flat-index gather, producing a 1-D tensor.
    pub fn gather(self, idx: &[usize]) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx {
            data.push(*x.data().get(i).ok_or(TensorError::IndexOutOfRange {
                op: "gather",
                index: i,
                bound: x.numel(),
            })?);
        }
        let v = Tensor::new(vec![idx.len()], data)?;
        Ok(self.unary(
            v,
            Op::Gather {
                a: self.id,
                idx: idx.to_vec(),
            },
        ))
    }

    /// Rows of a matrix by index (rows may repeat).
    pub fn index_rows(self, idx: Rc<Vec<usize>>) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        check_2d("index_rows", &x)?;
        let v = x.select_leading(&idx)?;
        Ok(self.unary(v, Op::IndexRows { a: self.id, idx }))
    }

    /// Row-wise sum into `segments` buckets: `out[seg[p]] += self[p]`.
    pub fn segment_sum(self, seg: Rc<Vec<usize>>, segments: usize) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        let (p, w) = check_2d("segment_sum", &x)?;
        if seg.len() != p {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: x.shape().to_vec(),
                right: vec![seg.len()],
            });
        }
        let mut out = vec![0.0; segments * w];
        for (r, &s) in seg.iter().enumerate() {
            if s >= segments {
                return Err(TensorError::IndexOutOfRange {
                    op: "segment_sum",
                    index: s,
                    bound: segments,
                });
            }
            for c in 0..w {
                out[s * w + c] += x.data()[r * w + c];
            }
        }
        let v = Tensor::new(vec![segments, w], out)?;
        Ok(self.unary(v, Op::SegmentSum { a: self.id, seg }))
    }

    /// Softmax of a `[P,1]` column within each segment of `seg`.
    pub fn segment_softmax(self, seg: Rc<Vec<usize>>) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        let (p, w) = check_2d("segment_softmax", &x)?;
        if w != 1 || seg.len() != p {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                left: x.shape().to_vec(),
                right: vec![seg.len(), 1],
            });
        }
        let n = seg.iter().copied().max().map_or(0, |m| m + 1);
        let mut maxes = vec![f64::NEG_INFINITY; n];
        for (i, &s) in seg.iter().enumerate() {
            maxes[s] = maxes[s].max(x.data()[i]);
        }
        let mut out: Vec<f64> = seg
            .iter()
            .enumerate()
            .map(|(i, &s)| (x.data()[i] - maxes[s]).exp())
            .collect();
        let mut sums = vec![0.0; n];
        for (i, &s) in seg.iter().enumerate() {
            sums[s] += out[i];
        }
        for (i, &s) in seg.iter().enumerate() {
            out[i] /= sums[s];
        }
        let v = Tensor::new(vec![p, 1], out)?;
        Ok(self.unary(v, Op::SegmentSoftmax { a: self.id, seg }))
    }

    /// Multiply each row of `self [P,d]` by the matching entry of `w [P,1]`.
    pub fn scale_rows(self, w: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (x, wv) = (self.value(), w.value());
        let (p, d) = check_2d("scale_rows", &x)?;
        if wv.shape() != [p, 1] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                left: x.shape().to_vec(),
                right: wv.shape().to_vec(),
            });
        }
        let v = Tensor::from_fn(x.shape(), |i| x.data()[i] * wv.data()[i / d]);
        Ok(self.binary(w, v, Op::ScaleRows { a: self.id, w: w.id }))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        check_2d("slice_rows", &x)?;
        let v = x.slice_leading(start, len)?;
        Ok(self.unary(v, Op::SliceRows { a: self.id, start }))
    }

    /// Stack matrices with equal column counts vertically.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty { op: "concat_rows" })?;
        let cols = check_2d("concat_rows", &first.value())?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let v = p.value();
            let (r, c) = check_2d("concat_rows", &v)?;
            if c != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: first.shape(),
                    right: v.shape().to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let v = Tensor::new(vec![rows, cols], data)?;
        Ok(first.tape.record(v, Op::ConcatRows(ids.clone()), &ids))
    }

    /// Zero-pad a matrix on the right to `cols` columns.
    pub fn pad_cols(self, cols: usize) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        let (r, w) = check_2d("pad_cols", &x)?;
        if w > cols {
            return Err(TensorError::ShapeMismatch {
                op: "pad_cols",
                left: x.shape().to_vec(),
                right: vec![r, cols],
            });
        }
        let v = Tensor::from_fn(&[r, cols], |i| {
            let (row, c) = (i / cols, i % cols);
            if c < w {
                x.data()[row * w + c]
            } else {
                0.0
            }
        });
        Ok(self.unary(v, Op::PadCols { a: self.id, cols }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, TensorError> {
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        let v = self.value().map(|x| x.clamp(lo, hi));
        self.unary(v, Op::Clamp { a: self.id, lo, hi })
    }

    pub fn minimum(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "minimum",
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let v = Tensor::from_fn(a.shape(), |i| a.data()[i].min(b.data()[i]));
        Ok(self.binary(other, v, Op::Minimum(self.id, other.id)))
    }

    /// Zero every position where `mask` is zero; other values pass through bit-exactly.
    pub fn mask(self, mask: Rc<Tensor>) -> Result<Var<'t>, TensorError> {
        let x = self.value();
        if x.shape() != mask.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mask",
                left: x.shape().to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        let v = apply_mask(&x, &mask);
        Ok(self.unary(v, Op::Mask { a: self.id, mask }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let w = tape.param(Tensor::from_fn(&[2, 3, 4], |i| i as f64 * 0.1));
        let grads = tape.backward(w.sum()).unwrap();
        assert!(grads.wrt(w).data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn half_square_norm_gradient_is_identity() {
        let tape = Tape::new();
        let t = Tensor::from_fn(&[3, 3], |i| (i as f64 - 4.0) * 0.7);
        let w = tape.param(t.clone());
        let loss = w.square().sum().scale(0.5);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w), t);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let w = tape.param(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(w), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::new();
        assert_eq!(tape.constant(Tensor::scalar(0.0)).tanh().value().data(), &[0.0]);
        assert_eq!(tape.constant(Tensor::scalar(-1.0)).leaky_relu(0.2).value().data(), &[-0.2]);
        let logits = tape.constant(Tensor::zeros(&[3, 4]));
        let ce = logits.cross_entropy(&[0, 3, 2]).unwrap().value().data()[0];
        assert!((ce - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn trailing_broadcast_only() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::ones(&[2, 3]));
        let b = tape.constant(Tensor::ones(&[3]));
        assert!(a.add(b).is_ok());
        let c = tape.constant(Tensor::ones(&[2]));
        assert!(a.add(c).is_err());
        let d = tape.constant(Tensor::ones(&[2, 1]));
        assert!(a.mul(d).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::ones(&[2, 2]));
        let w = tape.param(Tensor::ones(&[2, 2]));
        let grads = tape.backward(x.matmul(w).unwrap().sum()).unwrap();
        assert!(grads.get(x).is_none());
        assert!(grads.get(w).is_some());
    }
}
