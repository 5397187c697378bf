//! Reverse-mode automatic differentiation over a per-pass tape.
//!
//! A [`Graph`] records every operation of one forward pass. Leaves are added
//! with [`Graph::leaf`]; after [`Graph::backward`] each leaf that was created
//! with `requires_grad` holds `d(loss)/d(leaf)` (zeros when the loss does not
//! depend on it). A tape belongs to a single pass and is not shared.

use std::hash::{DefaultHasher, Hash, Hasher};

use super::kernels::{self, ConvGrads};
use super::ops::{self, PoolKind};
use super::{same_shape, ConvSpec, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
    },
    Depthwise {
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvg(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        strides: [usize; 4],
    },
    Concat(Vec<Var>),
    Scale(Var, T),
    Shift(Var),
    Mean(Var),
    Sum(Var),
    Crop {
        x: Var,
        y0: usize,
        x0: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    needs_grad: bool,
    grad: Option<Tensor<T>>,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad: false,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            needs_grad: requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A constant copy of `v`; gradients do not flow back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass, for leaves created with `requires_grad`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        ops::check_conv(self.shape(x), self.value(w), self.value(b), &spec)?;
        let out = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), &spec);
        Ok(self.push(out, Op::Conv { x, w, b, spec }, &[x, w, b]))
    }

    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        ops::check_depthwise(self.shape(x), self.value(w), self.value(b), &spec)?;
        let out = kernels::depthwise_forward(self.value(x), self.value(w), self.value(b), &spec);
        Ok(self.push(out, Op::Depthwise { x, w, b, spec }, &[x, w, b]))
    }

    pub fn pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        ops::check_pool(self.shape(x), kind)?;
        Ok(match kind {
            PoolKind::Max2x2 => {
                let (out, argmax) = kernels::max_pool2_forward(self.value(x));
                self.push(out, Op::MaxPool { x, argmax }, &[x])
            }
            PoolKind::GlobalAvg => {
                let out = kernels::global_avg_forward(self.value(x));
                self.push(out, Op::GlobalAvg(x), &[x])
            }
        })
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        self.pool(x, PoolKind::Max2x2)
    }

    pub fn global_avg(&mut self, x: Var) -> Result<Var> {
        self.pool(x, PoolKind::GlobalAvg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        self.push(out, Op::Abs(x), &[x])
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var, broadcast: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcast {
            same_shape(sa, sb, &format!("{kind:?}").to_lowercase())?;
        }
        let strides = kernels::broadcast_strides(sa, sb)
            .ok_or_else(|| Error::dim(format!("cannot broadcast {sb} onto {sa}")))?;
        let mut out = Tensor::zeros(sa);
        {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            let od = out.data_mut();
            match kind {
                BinaryKind::Add => kernels::for_each_broadcast(sa, strides, |i, j| od[i] = ad[i] + bd[j]),
                BinaryKind::Sub => kernels::for_each_broadcast(sa, strides, |i, j| od[i] = ad[i] - bd[j]),
                BinaryKind::Mul => kernels::for_each_broadcast(sa, strides, |i, j| od[i] = ad[i] * bd[j]),
                BinaryKind::Div => kernels::for_each_broadcast(sa, strides, |i, j| od[i] = ad[i] / bd[j]),
            }
        }
        Ok(self.push(out, Op::Binary { kind, a, b, strides }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b, false)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b, false)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b, false)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b, false)
    }

    /// `a + b` with `b` broadcast along its size-1 axes.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b, true)
    }

    pub fn sub_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b, true)
    }

    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b, true)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let shapes: Vec<Shape> = parts.iter().map(|&p| self.shape(p)).collect();
        ops::check_concat(&shapes)?;
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = kernels::concat_channels(&values);
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let k = T::from_f64(k);
        let out = self.value(x).map(|v| v * k);
        self.push(out, Op::Scale(x, k), &[x])
    }

    pub fn shift(&mut self, x: Var, k: f64) -> Var {
        let k = T::from_f64(k);
        let out = self.value(x).map(|v| v + k);
        self.push(out, Op::Shift(x), &[x])
    }

    /// Mean of every element, as a `(1, 1, 1, 1)` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().copied().sum::<T>() / T::from_f64(v.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var> {
        let out = self.value(x).crop(y0, x0, h, w)?;
        Ok(self.push(out, Op::Crop { x, y0, x0 }, &[x]))
    }

    /// Populate gradients of `loss` on every `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != Shape::scalar() {
            return Err(Error::Contract(format!(
                "backward needs a (1, 1, 1, 1) loss, got {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].requires_grad {
                    self.nodes[i].grad = Some(g);
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        for node in self.nodes.iter_mut() {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } | Op::Depthwise { x, w, b, spec } => {
                let need_x = self.wants(*x);
                let need_p = self.wants(*w) || self.wants(*b);
                let backward = if matches!(node.op, Op::Conv { .. }) {
                    kernels::conv2d_backward
                } else {
                    kernels::depthwise_backward
                };
                let ConvGrads { input, weight, bias } =
                    backward(self.value(*x), self.value(*w), spec, g, need_x, need_p);
                if let Some(gx) = input {
                    accumulate(grads, *x, gx);
                }
                if let (Some(gw), Some(gb)) = (weight, bias) {
                    if self.wants(*w) {
                        accumulate(grads, *w, gw);
                    }
                    if self.wants(*b) {
                        let gb = gb.reshape(self.shape(*b)).expect("bias grad length");
                        accumulate(grads, *b, gb);
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let d = gx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    d[src] = d[src] + gv;
                }
                accumulate(grads, *x, gx);
            }
            Op::GlobalAvg(x) => {
                let s = self.shape(*x);
                let inv = T::from_f64(1.0 / s.plane() as f64);
                let mut gx = Tensor::zeros(s);
                for (plane, &gv) in gx.data_mut().chunks_mut(s.plane()).zip(g.data()) {
                    plane.fill(gv * inv);
                }
                accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let data = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, *x, Tensor::new(g.shape(), data).expect("relu grad"));
            }
            Op::Sigmoid(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect();
                accumulate(grads, *x, Tensor::new(g.shape(), data).expect("sigmoid grad"));
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                let data = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| {
                        if v > T::zero() {
                            gv
                        } else if v < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                accumulate(grads, *x, Tensor::new(g.shape(), data).expect("abs grad"));
            }
            Op::Binary { kind, a, b, strides } => {
                self.binary_backward(*kind, *a, *b, *strides, g, grads);
            }
            Op::Concat(parts) => {
                let s = g.shape();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).c;
                    if self.wants(p) {
                        let mut gp = Tensor::zeros(self.shape(p));
                        let per = pc * s.plane();
                        for n in 0..s.n {
                            let src = (n * s.c + offset) * s.plane();
                            gp.data_mut()[n * per..(n + 1) * per]
                                .copy_from_slice(&g.data()[src..src + per]);
                        }
                        accumulate(grads, p, gp);
                    }
                    offset += pc;
                }
            }
            Op::Scale(x, k) => {
                let k = *k;
                accumulate(grads, *x, g.map(|v| v * k));
            }
            Op::Shift(x) => accumulate(grads, *x, g.clone()),
            Op::Mean(x) => {
                let s = self.shape(*x);
                let gv = g.data()[0] / T::from_f64(s.len() as f64);
                accumulate(grads, *x, Tensor::full(s, gv));
            }
            Op::Sum(x) => {
                accumulate(grads, *x, Tensor::full(self.shape(*x), g.data()[0]));
            }
            Op::Crop { x, y0, x0 } => {
                let s = self.shape(*x);
                let gs = g.shape();
                let mut gx = Tensor::zeros(s);
                for p in 0..s.n * s.c {
                    for y in 0..gs.h {
                        let dst = p * s.plane() + (y0 + y) * s.w + x0;
                        let src = p * gs.plane() + y * gs.w;
                        gx.data_mut()[dst..dst + gs.w].copy_from_slice(&g.data()[src..src + gs.w]);
                    }
                }
                accumulate(grads, *x, gx);
            }
        }
    }

    fn binary_backward(
        &self,
        kind: BinaryKind,
        a: Var,
        b: Var,
        strides: [usize; 4],
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) {
        let sa = self.shape(a);
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let gd = g.data();
        if self.wants(a) {
            let mut ga = Tensor::zeros(sa);
            let o = ga.data_mut();
            match kind {
                BinaryKind::Add | BinaryKind::Sub => o.copy_from_slice(gd),
                BinaryKind::Mul => kernels::for_each_broadcast(sa, strides, |i, j| o[i] = gd[i] * bd[j]),
                BinaryKind::Div => kernels::for_each_broadcast(sa, strides, |i, j| o[i] = gd[i] / bd[j]),
            }
            accumulate(grads, a, ga);
        }
        if self.wants(b) {
            let mut gb = Tensor::zeros(self.shape(b));
            let o = gb.data_mut();
            match kind {
                BinaryKind::Add => kernels::for_each_broadcast(sa, strides, |i, j| o[j] = o[j] + gd[i]),
                BinaryKind::Sub => kernels::for_each_broadcast(sa, strides, |i, j| o[j] = o[j] - gd[i]),
                BinaryKind::Mul => {
                    kernels::for_each_broadcast(sa, strides, |i, j| o[j] = o[j] + gd[i] * ad[i])
                }
                BinaryKind::Div => kernels::for_each_broadcast(sa, strides, |i, j| {
                    o[j] = o[j] - gd[i] * ad[i] / (bd[j] * bd[j])
                }),
            }
            accumulate(grads, b, gb);
        }
    }

    /// Digest of every branch decision taken by non-smooth operations (ReLU
    /// masks, |x| signs, max-pool winners). Two passes with equal digests lie
    /// on the same smooth piece of the computation.
    pub fn branch_digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) | Op::Abs(x) => {
                    for &v in self.value(*x).data() {
                        (v.partial_cmp(&T::zero()).map(|o| o as i8)).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, &b)| *a = *a + b),
        slot @ None => *slot = Some(g),
    }
}
