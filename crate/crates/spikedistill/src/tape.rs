//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! A [`Tape`] owns every forward value; ops append [`Node`]s and hand back
//! [`Var`] handles. Append order is a topological order, so `backward` walks
//! the nodes once in reverse, accumulating adjoints. Nothing on the tape is
//! ever mutated after creation: leaves snapshot their data, and each op reads
//! input values straight from the arena.
//!
//! One tape spans one forward pass (for spiking nets, all T unrolled steps),
//! and is dropped after gradient extraction.

use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Forward behavior of the spike nonlinearity.
///
/// `Hard` is the step function used for training and inference. `Soft`
/// replaces the step by the sigmoid surrogate itself, making the whole graph
/// smooth; both modes share the one backward rule, which is what lets finite
/// differences certify the surrogate path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone)]
enum Op<T: Scalar> {
    Leaf,
    Matmul { a: Var, b: Var },
    Conv2d { x: Var, k: Var, stride: usize, pad: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddScalar { x: Var },
    MulScalar { x: Var, c: T },
    Relu { x: Var },
    Sigmoid { x: Var },
    Exp { x: Var },
    Log { x: Var },
    Sum { x: Var },
    MeanAxis { x: Var, axis: usize },
    AvgPool2d { x: Var, k: usize },
    Reshape { x: Var },
    SoftmaxLast { x: Var },
    CrossEntropy { logits: Var, labels: Vec<usize> },
    SoftCrossEntropy { logits: Var, target: Tensor<T> },
    Spike { u: Var, alpha: T },
    Detach,
    Stack0 { parts: Vec<Var> },
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient w.r.t. `v`; zeros when `v` is unreachable from the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Snapshot `value` onto the tape as a leaf.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    // -- op builders --------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::Matmul { a, b }, value, rg))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = kernels::conv2d(self.value(x), self.value(k), stride, pad)?;
        let rg = self.requires_grad(x) || self.requires_grad(k);
        Ok(self.push(Op::Conv2d { x, k, stride, pad }, value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::binary_broadcast(self.value(a), self.value(b), |x, y| x + y)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::Add { a, b }, value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::binary_broadcast(self.value(a), self.value(b), |x, y| x - y)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::Sub { a, b }, value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::binary_broadcast(self.value(a), self.value(b), |x, y| x * y)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(Op::Mul { a, b }, value, rg))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.requires_grad(x);
        self.push(Op::AddScalar { x }, value, rg)
    }

    pub fn mul_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.requires_grad(x);
        self.push(Op::MulScalar { x, c }, value, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = kernels::relu(self.value(x));
        let rg = self.requires_grad(x);
        self.push(Op::Relu { x }, value, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = kernels::sigmoid(self.value(x));
        let rg = self.requires_grad(x);
        self.push(Op::Sigmoid { x }, value, rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.exp());
        let rg = self.requires_grad(x);
        self.push(Op::Exp { x }, value, rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let value = self.value(x).map(|v| v.ln());
        let rg = self.requires_grad(x);
        Ok(self.push(Op::Log { x }, value, rg))
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        let rg = self.requires_grad(x);
        self.push(Op::Sum { x }, Tensor::scalar(total), rg)
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("mean over axis {axis} of shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let ax = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let inv = T::from_f64(1.0 / ax as f64);
        let mut out = vec![T::zero(); outer * inner];
        let data = self.value(x).data();
        for o in 0..outer {
            for a in 0..ax {
                let src = &data[(o * ax + a) * inner..(o * ax + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        for v in out.iter_mut() {
            *v = *v * inv;
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(Op::MeanAxis { x, axis }, value, rg))
    }

    pub fn avgpool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let value = kernels::avgpool2d(self.value(x), k)?;
        let rg = self.requires_grad(x);
        Ok(self.push(Op::AvgPool2d { x, k }, value, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(Op::Reshape { x }, value, rg))
    }

    /// Flatten (b, rest...) → (b, prod(rest)).
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        if shape.is_empty() {
            return Err(Error::dim("flatten needs at least 1-d input"));
        }
        let b = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(x, &[b, rest])
    }

    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let value = kernels::softmax_last(self.value(x))?;
        let rg = self.requires_grad(x);
        Ok(self.push(Op::SoftmaxLast { x }, value, rg))
    }

    /// Batch-mean cross-entropy against hard labels, computed with
    /// log-sum-exp (softmax is never materialized in the forward value).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::dim(format!("cross_entropy expects (batch, classes), got {shape:?}")));
        }
        let (b, n) = (shape[0], shape[1]);
        if labels.len() != b {
            return Err(Error::dim(format!("{} labels for batch of {b}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::Contract(format!("label {bad} out of range for {n} classes")));
        }
        let lse = kernels::logsumexp_rows(self.value(logits));
        let data = self.value(logits).data();
        let mut total = T::zero();
        for (i, (&label, &l)) in labels.iter().zip(&lse).enumerate() {
            total = total + (l - data[i * n + label]);
        }
        let mean = total * T::from_f64(1.0 / b as f64);
        let rg = self.requires_grad(logits);
        Ok(self.push(Op::CrossEntropy { logits, labels: labels.to_vec() }, Tensor::scalar(mean), rg))
    }

    /// Batch-mean soft cross-entropy −Σ target·log_softmax(logits); `target`
    /// rows are probability distributions and carry no gradient.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: &Tensor<T>) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() != 2 || target.shape() != shape.as_slice() {
            return Err(Error::dim(format!(
                "soft_cross_entropy shapes disagree: logits {shape:?}, target {:?}",
                target.shape()
            )));
        }
        let (b, n) = (shape[0], shape[1]);
        let lse = kernels::logsumexp_rows(self.value(logits));
        let data = self.value(logits).data();
        let mut total = T::zero();
        for i in 0..b {
            let mut row = T::zero();
            for j in 0..n {
                row = row + target.data()[i * n + j] * (data[i * n + j] - lse[i]);
            }
            total = total - row;
        }
        let mean = total * T::from_f64(1.0 / b as f64);
        let rg = self.requires_grad(logits);
        Ok(self.push(
            Op::SoftCrossEntropy { logits, target: target.clone() },
            Tensor::scalar(mean),
            rg,
        ))
    }

    /// Spike nonlinearity at `u = H − V_th`.
    ///
    /// Hard mode: 1 where u ≥ 0 else 0. Soft mode: σ(α·u). Backward is the
    /// same rule in both modes: α·σ(αu)·(1−σ(αu)); the exact step derivative
    /// (+∞ at 0, 0 elsewhere) is never used.
    pub fn spike(&mut self, u: Var, alpha: T, mode: SurrogateMode) -> Var {
        let value = match mode {
            SurrogateMode::Hard => {
                self.value(u).map(|v| if v >= T::zero() { T::one() } else { T::zero() })
            }
            SurrogateMode::Soft => self.value(u).map(|v| kernels::sigmoid_scalar(alpha * v)),
        };
        let rg = self.requires_grad(u);
        self.push(Op::Spike { u, alpha }, value, rg)
    }

    /// Identity forward, zero backward.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push(Op::Detach, value, false)
    }

    /// Stack same-shaped tensors along a new leading axis.
    pub fn stack0(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("stack0 of zero tensors"));
        }
        let part_shape = self.value(parts[0]).shape().to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(parts[0]).numel());
        let mut rg = false;
        for &p in parts {
            if self.value(p).shape() != part_shape.as_slice() {
                return Err(Error::dim(format!(
                    "stack0 shape mismatch: {:?} vs {part_shape:?}",
                    self.value(p).shape()
                )));
            }
            data.extend_from_slice(self.value(p).data());
            rg |= self.requires_grad(p);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&part_shape);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(Op::Stack0 { parts: parts.to_vec() }, value, rg))
    }

    // -- backward ------------------------------------------------------------

    /// Reverse sweep from a scalar `loss`. Consumes the tape; the returned
    /// [`Grads`] yields ∂loss/∂v for every var, zeros for vars the loss does
    /// not reach.
    pub fn backward(self, loss: Var) -> Result<Grads<T>> {
        if self.nodes.is_empty() {
            return Err(Error::Contract("backward on an empty tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let g = match grads[id].clone() {
                Some(g) => g,
                None => continue,
            };
            self.apply_backward(id, &g, &mut grads)?;
        }

        let shapes = self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Grads { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, contrib: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                debug_assert_eq!(existing.shape(), contrib.shape());
                for (e, c) in existing.data_mut().iter_mut().zip(contrib.data()) {
                    *e = *e + *c;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    fn apply_backward(
        &self,
        id: usize,
        g: &Tensor<T>,
        grads: &mut Vec<Option<Tensor<T>>>,
    ) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                let ga = kernels::matmul_nt_raw(g.data(), bv.data(), m, n, k);
                let gb = kernels::matmul_tn_raw(av.data(), g.data(), k, m, n);
                self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?);
                self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?);
            }
            Op::Conv2d { x, k, stride, pad } => {
                let (gx, gk) =
                    kernels::conv2d_backward(self.value(*x), self.value(*k), g, *stride, *pad)?;
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *k, gk);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, kernels::reduce_to_shape(g, self.value(*a).shape()));
                self.accumulate(grads, *b, kernels::reduce_to_shape(g, self.value(*b).shape()));
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, kernels::reduce_to_shape(g, self.value(*a).shape()));
                let neg = kernels::reduce_to_shape(g, self.value(*b).shape()).map(|v| -v);
                self.accumulate(grads, *b, neg);
            }
            Op::Mul { a, b } => {
                if self.nodes[a.0].requires_grad {
                    let gb = kernels::binary_broadcast(g, self.value(*b), |x, y| x * y)?;
                    self.accumulate(grads, *a, kernels::reduce_to_shape(&gb, self.value(*a).shape()));
                }
                if self.nodes[b.0].requires_grad {
                    let ga = kernels::binary_broadcast(g, self.value(*a), |x, y| x * y)?;
                    self.accumulate(grads, *b, kernels::reduce_to_shape(&ga, self.value(*b).shape()));
                }
            }
            Op::AddScalar { x } => self.accumulate(grads, *x, g.clone()),
            Op::MulScalar { x, c } => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::Relu { x } => {
                let data = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Sigmoid { x } => {
                let s = &self.nodes[id].value;
                let data = s
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&sv, &gv)| gv * sv * (T::one() - sv))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Exp { x } => {
                let y = &self.nodes[id].value;
                let data = y.data().iter().zip(g.data()).map(|(&yv, &gv)| gv * yv).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Log { x } => {
                let xv = self.value(*x);
                let data = xv.data().iter().zip(g.data()).map(|(&v, &gv)| gv / v).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Sum { x } => {
                let gs = g.item()?;
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), gs));
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.value(*x).shape().to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let ax = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let inv = T::from_f64(1.0 / ax as f64);
                let mut gx = vec![T::zero(); outer * ax * inner];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for a in 0..ax {
                        let dst = &mut gx[(o * ax + a) * inner..(o * ax + a + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = s * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(shape, gx)?);
            }
            Op::AvgPool2d { x, k } => {
                let gx = kernels::avgpool2d_backward(self.value(*x).shape(), g, *k);
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, g.reshaped(self.value(*x).shape())?);
            }
            Op::SoftmaxLast { x } => {
                let s = &self.nodes[id].value;
                let n = *s.shape().last().expect("softmax value rank");
                let mut gx = vec![T::zero(); s.numel()];
                for ((gx_row, s_row), g_row) in
                    gx.chunks_mut(n).zip(s.data().chunks(n)).zip(g.data().chunks(n))
                {
                    let dot = s_row
                        .iter()
                        .zip(g_row)
                        .fold(T::zero(), |acc, (&sv, &gv)| acc + sv * gv);
                    for ((o, &sv), &gv) in gx_row.iter_mut().zip(s_row).zip(g_row) {
                        *o = sv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(s.shape().to_vec(), gx)?);
            }
            Op::CrossEntropy { logits, labels } => {
                let gs = g.item()?;
                let p = kernels::softmax_last(self.value(*logits))?;
                let (b, n) = (p.shape()[0], p.shape()[1]);
                let scale = gs * T::from_f64(1.0 / b as f64);
                let mut gx = p.into_data();
                for (i, &label) in labels.iter().enumerate() {
                    gx[i * n + label] = gx[i * n + label] - T::one();
                }
                for v in gx.iter_mut() {
                    *v = *v * scale;
                }
                self.accumulate(grads, *logits, Tensor::new(vec![b, n], gx)?);
            }
            Op::SoftCrossEntropy { logits, target } => {
                let gs = g.item()?;
                let p = kernels::softmax_last(self.value(*logits))?;
                let (b, n) = (p.shape()[0], p.shape()[1]);
                let scale = gs * T::from_f64(1.0 / b as f64);
                let mut gx = vec![T::zero(); b * n];
                for i in 0..b {
                    let q_row = &target.data()[i * n..(i + 1) * n];
                    let q_sum = q_row.iter().fold(T::zero(), |a, &v| a + v);
                    let p_row = &p.data()[i * n..(i + 1) * n];
                    for j in 0..n {
                        gx[i * n + j] = (p_row[j] * q_sum - q_row[j]) * scale;
                    }
                }
                self.accumulate(grads, *logits, Tensor::new(vec![b, n], gx)?);
            }
            Op::Spike { u, alpha } => {
                let a = *alpha;
                let data = self
                    .value(*u)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&uv, &gv)| {
                        let s = kernels::sigmoid_scalar(a * uv);
                        gv * a * s * (T::one() - s)
                    })
                    .collect();
                self.accumulate(grads, *u, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Detach => {}
            Op::Stack0 { parts } => {
                let part_numel = self.value(parts[0]).numel();
                let part_shape = self.value(parts[0]).shape().to_vec();
                for (i, &p) in parts.iter().enumerate() {
                    let slice = g.data()[i * part_numel..(i + 1) * part_numel].to_vec();
                    self.accumulate(grads, p, Tensor::new(part_shape.clone(), slice)?);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap(), true);
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        assert_eq!(tape.value(loss).item().unwrap(), 14.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_grad() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let y = tape.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap(), true);
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn relu_and_sigmoid_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap(), false);
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.leaf(Tensor::scalar(0.0), false);
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item().unwrap(), 0.5);
    }

    #[test]
    fn soft_cross_entropy_uniform_is_ln4() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::new(vec![1, 4], vec![0.0; 4]).unwrap(), false);
        let target = Tensor::new(vec![1, 4], vec![0.25; 4]).unwrap();
        let loss = tape.soft_cross_entropy(logits, &target).unwrap();
        assert!((tape.value(loss).item().unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_of_non_positive_is_domain_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap(), false);
        assert!(matches!(tape.log(x), Err(crate::error::Error::Domain(_))));
    }

    #[test]
    fn detach_stops_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![2.0, 3.0]).unwrap(), true);
        let d = tape.detach(x);
        let sq = tape.mul(d, d).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gradient_linearity_over_loss_sum() {
        // backward(l1 + l2) == backward(l1) + backward(l2)
        let data = Tensor::new(vec![3], vec![0.5, -1.5, 2.0]).unwrap();
        let combined = {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(data.clone(), true);
            let sq = tape.mul(x, x).unwrap();
            let l1 = tape.sum(sq);
            let s = tape.sigmoid(x);
            let l2 = tape.sum(s);
            let loss = tape.add(l1, l2).unwrap();
            let grads = tape.backward(loss).unwrap();
            grads.wrt(x)
        };
        let separate: Vec<f64> = {
            let mut t1 = Tape::<f64>::new();
            let x1 = t1.leaf(data.clone(), true);
            let sq = t1.mul(x1, x1).unwrap();
            let l1 = t1.sum(sq);
            let g1 = t1.backward(l1).unwrap().wrt(x1);

            let mut t2 = Tape::<f64>::new();
            let x2 = t2.leaf(data, true);
            let s = t2.sigmoid(x2);
            let l2 = t2.sum(s);
            let g2 = t2.backward(l2).unwrap().wrt(x2);
            g1.data().iter().zip(g2.data()).map(|(a, b)| a + b).collect()
        };
        for (c, s) in combined.data().iter().zip(&separate) {
            assert!((c - s).abs() < 1e-15);
        }
    }

    #[test]
    fn stack_and_mean_axis_distribute_grad() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), true);
        let b = tape.leaf(Tensor::new(vec![2], vec![3.0, 5.0]).unwrap(), true);
        let st = tape.stack0(&[a, b]).unwrap();
        assert_eq!(tape.value(st).shape(), &[2, 2]);
        let m = tape.mean_axis(st, 0).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 3.5]);
        let loss = tape.sum(m);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(a).data(), &[0.5, 0.5]);
        assert_eq!(grads.wrt(b).data(), &[0.5, 0.5]);
    }

    #[test]
    fn spike_modes_share_one_backward_rule() {
        let u = Tensor::new(vec![5], vec![-2.0, -0.5, 0.0, 0.5, 2.0]).unwrap();
        let mut hard_tape = Tape::<f64>::new();
        let uh = hard_tape.leaf(u.clone(), true);
        let sh = hard_tape.spike(uh, 4.0, SurrogateMode::Hard);
        assert_eq!(hard_tape.value(sh).data(), &[0.0, 0.0, 1.0, 1.0, 1.0]);
        let lh = hard_tape.sum(sh);
        let gh = hard_tape.backward(lh).unwrap().wrt(uh);

        let mut soft_tape = Tape::<f64>::new();
        let us = soft_tape.leaf(u, true);
        let ss = soft_tape.spike(us, 4.0, SurrogateMode::Soft);
        let ls = soft_tape.sum(ss);
        let gs = soft_tape.backward(ls).unwrap().wrt(us);

        assert_eq!(gh.data(), gs.data());
        // analytic value at u=0, alpha=4: 4 * 0.5 * 0.5 = 1.0
        assert_eq!(gh.data()[2], 1.0);
    }
}
