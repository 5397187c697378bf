//! Shape-checked forward operations on plain tensors. The recorded,
//! differentiable versions live on [`Graph`](super::Graph); both share the
//! same kernels.

use serde::{Deserialize, Serialize};

use super::kernels;
use super::{same_shape, ConvSpec, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    /// 2×2 window, stride 2. Odd trailing rows/columns are dropped.
    Max2x2,
    /// Spatial mean, `(N, C, 1, 1)` output.
    GlobalAvg,
}

pub(crate) fn check_conv<T: Scalar>(
    input: Shape,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<()> {
    spec.validate()?;
    if input.c != spec.in_channels {
        return Err(Error::dim(format!(
            "conv2d expects {} input channels, got {}",
            spec.in_channels, input.c
        )));
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::dim(format!(
            "conv2d weight shape {} does not match {}",
            weight.shape(),
            spec.weight_shape()
        )));
    }
    check_bias(bias, spec)
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    if bias.len() != spec.out_channels {
        return Err(Error::dim(format!(
            "bias has {} values, expected {}",
            bias.len(),
            spec.out_channels
        )));
    }
    Ok(())
}

pub(crate) fn check_depthwise<T: Scalar>(
    input: Shape,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<()> {
    spec.validate()?;
    if spec.in_channels != spec.out_channels || input.c != spec.in_channels {
        return Err(Error::dim(format!(
            "depthwise conv needs equal channel counts (spec {}→{}, input {})",
            spec.in_channels, spec.out_channels, input.c
        )));
    }
    if weight.shape() != spec.depthwise_weight_shape() {
        return Err(Error::dim(format!(
            "depthwise weight shape {} does not match {}",
            weight.shape(),
            spec.depthwise_weight_shape()
        )));
    }
    check_bias(bias, spec)
}

pub(crate) fn check_pool(input: Shape, kind: PoolKind) -> Result<()> {
    let ok = match kind {
        PoolKind::Max2x2 => input.h >= 2 && input.w >= 2,
        PoolKind::GlobalAvg => input.h >= 1 && input.w >= 1,
    };
    if !ok {
        return Err(Error::dim(format!(
            "{kind:?} pooling on empty spatial extent {}x{}",
            input.h, input.w
        )));
    }
    Ok(())
}

pub(crate) fn check_concat(shapes: &[Shape]) -> Result<()> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::dim("concat of zero tensors"))?;
    for s in shapes {
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::dim(format!(
                "concat_channels: {s} incompatible with {first}"
            )));
        }
    }
    Ok(())
}

/// Same-padded, stride-1 convolution. `weights` is `(out, in, k, k)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_conv(input.shape(), weights, bias, spec)?;
    Ok(kernels::conv2d_forward(input, weights, bias, spec))
}

/// Per-channel convolution. `weights` is `(C, 1, k, k)`.
pub fn depthwise_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_depthwise(input.shape(), weights, bias, spec)?;
    Ok(kernels::depthwise_forward(input, weights, bias, spec))
}

pub fn pool<T: Scalar>(input: &Tensor<T>, kind: PoolKind) -> Result<Tensor<T>> {
    check_pool(input.shape(), kind)?;
    Ok(match kind {
        PoolKind::Max2x2 => kernels::max_pool2_forward(input).0,
        PoolKind::GlobalAvg => kernels::global_avg_forward(input),
    })
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a.shape(), b.shape(), "add")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a.shape(), b.shape(), "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::new(a.shape(), data)
}

/// `a ⊙ b` where `b` is broadcast along its size-1 axes (e.g. a per-channel gate).
pub fn mul_broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast(a, b, |x, y| x * y)
}

pub fn add_broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast(a, b, |x, y| x + y)
}

fn broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let bs = kernels::broadcast_strides(a.shape(), b.shape()).ok_or_else(|| {
        Error::dim(format!(
            "cannot broadcast {} onto {}",
            b.shape(),
            a.shape()
        ))
    })?;
    let mut out = Tensor::zeros(a.shape());
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    kernels::for_each_broadcast(a.shape(), bs, |i, j| od[i] = f(ad[i], bd[j]));
    Ok(out)
}

/// Stack along the channel axis in argument order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let shapes: Vec<Shape> = parts.iter().map(|p| p.shape()).collect();
    check_concat(&shapes)?;
    Ok(kernels::concat_channels(parts))
}
