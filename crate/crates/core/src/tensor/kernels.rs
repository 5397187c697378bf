//! Raw forward and backward loops. Callers validate shapes first; every
//! function here assumes consistent inputs.

use super::{ConvSpec, Scalar, Shape, Tensor};
use crate::par;

/// Valid output columns `[lo, hi)` for a horizontal tap offset `dx`.
#[inline]
fn valid_span(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

#[inline]
fn tap_offset(tap: usize, dilation: usize, pad: usize) -> isize {
    (tap * dilation) as isize - pad as isize
}

/// Unfold one sample `(C, H, W)` into `(C·k·k, H·W)` columns.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, spec: &ConvSpec, cols: &mut [T]) {
    let k = spec.kernel;
    let pad = spec.pad();
    let hw = h * w;
    for ci in 0..c {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = tap_offset(ky, spec.dilation, pad);
            for kx in 0..k {
                let dx = tap_offset(kx, spec.dilation, pad);
                let (x0, x1) = valid_span(w, dx);
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        dst.fill(T::zero());
                        continue;
                    }
                    let sy = sy as usize;
                    dst[..x0].fill(T::zero());
                    dst[x1..].fill(T::zero());
                    let s0 = (sy * w) as isize + x0 as isize + dx;
                    dst[x0..x1].copy_from_slice(&src[s0 as usize..s0 as usize + (x1 - x0)]);
                }
            }
        }
    }
}

/// Fold `(C·k·k, H·W)` column gradients back onto a `(C, H, W)` sample.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, spec: &ConvSpec, gx: &mut [T]) {
    let k = spec.kernel;
    let pad = spec.pad();
    let hw = h * w;
    gx.fill(T::zero());
    for ci in 0..c {
        let dst = &mut gx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = tap_offset(ky, spec.dilation, pad);
            for kx in 0..k {
                let dx = tap_offset(kx, spec.dilation, pad);
                let (x0, x1) = valid_span(w, dx);
                if x0 >= x1 {
                    continue;
                }
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (sy as usize * w) as isize + x0 as isize + dx;
                    let d = &mut dst[s0 as usize..s0 as usize + (x1 - x0)];
                    for (g, &v) in d.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *g = *g + v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Tensor<T> {
    let s = x.shape();
    let (cin, cout, hw) = (spec.in_channels, spec.out_channels, s.plane());
    let ckk = cin * spec.kernel * spec.kernel;
    let out_shape = Shape::new(s.n, cout, s.h, s.w);
    let mut out = Tensor::zeros(out_shape);
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    par::for_each_chunk(out.data_mut(), cout * hw, |n, o| {
        let xn = &xd[n * cin * hw..(n + 1) * cin * hw];
        if spec.kernel == 1 {
            T::gemm(cout, ckk, hw, wd, (ckk, 1), xn, (hw, 1), o, false);
        } else {
            let mut cols = vec![T::zero(); ckk * hw];
            im2col(xn, cin, s.h, s.w, spec, &mut cols);
            T::gemm(cout, ckk, hw, wd, (ckk, 1), &cols, (hw, 1), o, false);
        }
        for (co, plane) in o.chunks_mut(hw).enumerate() {
            let b = bd[co];
            plane.iter_mut().for_each(|v| *v = *v + b);
        }
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_params: bool,
) -> ConvGrads<T> {
    let s = x.shape();
    let (cin, cout, hw) = (spec.in_channels, spec.out_channels, s.plane());
    let ckk = cin * spec.kernel * spec.kernel;
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();

    let per_sample = par::map_indexed(s.n, |n| {
        let xn = &xd[n * cin * hw..(n + 1) * cin * hw];
        let gn = &gd[n * cout * hw..(n + 1) * cout * hw];
        let owned_cols;
        let cols: &[T] = if spec.kernel == 1 {
            xn
        } else if need_params {
            let mut c = vec![T::zero(); ckk * hw];
            im2col(xn, cin, s.h, s.w, spec, &mut c);
            owned_cols = c;
            &owned_cols
        } else {
            &[]
        };
        let params = need_params.then(|| {
            let mut gw = vec![T::zero(); cout * ckk];
            T::gemm(cout, hw, ckk, gn, (hw, 1), cols, (1, hw), &mut gw, false);
            let gb: Vec<T> = gn.chunks(hw).map(|p| p.iter().copied().sum()).collect();
            (gw, gb)
        });
        let gx = need_input.then(|| {
            let mut gcols = vec![T::zero(); ckk * hw];
            T::gemm(ckk, cout, hw, wd, (1, ckk), gn, (hw, 1), &mut gcols, false);
            if spec.kernel == 1 {
                gcols
            } else {
                let mut gx = vec![T::zero(); cin * hw];
                col2im(&gcols, cin, s.h, s.w, spec, &mut gx);
                gx
            }
        });
        (gx, params)
    });

    let mut grads = ConvGrads {
        input: None,
        weight: None,
        bias: None,
    };
    if need_input {
        let mut gx = Vec::with_capacity(s.len());
        for (g, _) in &per_sample {
            gx.extend_from_slice(g.as_ref().expect("input grad computed"));
        }
        grads.input = Some(Tensor::new(s, gx).expect("input grad shape"));
    }
    if need_params {
        let mut gw = vec![T::zero(); cout * ckk];
        let mut gb = vec![T::zero(); cout];
        for (_, p) in &per_sample {
            let (w, b) = p.as_ref().expect("param grads computed");
            gw.iter_mut().zip(w).for_each(|(a, &v)| *a = *a + v);
            gb.iter_mut().zip(b).for_each(|(a, &v)| *a = *a + v);
        }
        grads.weight = Some(Tensor::new(spec.weight_shape(), gw).expect("weight grad shape"));
        grads.bias = Some(Tensor::new(spec.bias_shape(), gb).expect("bias grad shape"));
    }
    grads
}

/// Calls `f(dst_start, src_start, len)` for every in-bounds row segment of a
/// single tap displaced by `(dy, dx)`.
#[inline]
fn for_tap_rows(h: usize, w: usize, dy: isize, dx: isize, mut f: impl FnMut(usize, usize, usize)) {
    let (x0, x1) = valid_span(w, dx);
    if x0 >= x1 {
        return;
    }
    let (y0, y1) = valid_span(h, dy);
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let src = (sy * w) as isize + x0 as isize + dx;
        f(y * w + x0, src as usize, x1 - x0);
    }
}

pub(crate) fn depthwise_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Tensor<T> {
    let s = x.shape();
    let (c, hw, k) = (s.c, s.plane(), spec.kernel);
    let pad = spec.pad();
    let mut out = Tensor::zeros(s);
    let xd = x.data();
    let wd = weight.data();
    let bd = bias.data();
    par::for_each_chunk(out.data_mut(), hw, |p, o| {
        let ch = p % c;
        let src = &xd[p * hw..(p + 1) * hw];
        o.fill(bd[ch]);
        for ky in 0..k {
            let dy = tap_offset(ky, spec.dilation, pad);
            for kx in 0..k {
                let dx = tap_offset(kx, spec.dilation, pad);
                let wv = wd[(ch * k + ky) * k + kx];
                for_tap_rows(s.h, s.w, dy, dx, |d0, s0, len| {
                    for (ov, &iv) in o[d0..d0 + len].iter_mut().zip(&src[s0..s0 + len]) {
                        *ov = *ov + wv * iv;
                    }
                });
            }
        }
    });
    out
}

pub(crate) fn depthwise_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    need_input: bool,
    need_params: bool,
) -> ConvGrads<T> {
    let s = x.shape();
    let (c, hw, k) = (s.c, s.plane(), spec.kernel);
    let pad = spec.pad();
    let xd = x.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut grads = ConvGrads {
        input: None,
        weight: None,
        bias: None,
    };
    if need_input {
        let mut gx = Tensor::zeros(s);
        par::for_each_chunk(gx.data_mut(), hw, |p, gxp| {
            let ch = p % c;
            let g = &gd[p * hw..(p + 1) * hw];
            for ky in 0..k {
                let dy = tap_offset(ky, spec.dilation, pad);
                for kx in 0..k {
                    let dx = tap_offset(kx, spec.dilation, pad);
                    let wv = wd[(ch * k + ky) * k + kx];
                    for_tap_rows(s.h, s.w, dy, dx, |d0, s0, len| {
                        for (gi, &go) in gxp[s0..s0 + len].iter_mut().zip(&g[d0..d0 + len]) {
                            *gi = *gi + wv * go;
                        }
                    });
                }
            }
        });
        grads.input = Some(gx);
    }
    if need_params {
        let partials = par::map_indexed(s.n * c, |p| {
            let src = &xd[p * hw..(p + 1) * hw];
            let g = &gd[p * hw..(p + 1) * hw];
            let mut taps = vec![T::zero(); k * k + 1];
            for ky in 0..k {
                let dy = tap_offset(ky, spec.dilation, pad);
                for kx in 0..k {
                    let dx = tap_offset(kx, spec.dilation, pad);
                    let mut acc = T::zero();
                    for_tap_rows(s.h, s.w, dy, dx, |d0, s0, len| {
                        for (&go, &iv) in g[d0..d0 + len].iter().zip(&src[s0..s0 + len]) {
                            acc = acc + go * iv;
                        }
                    });
                    taps[ky * k + kx] = acc;
                }
            }
            taps[k * k] = g.iter().copied().sum();
            taps
        });
        let mut gw = vec![T::zero(); c * k * k];
        let mut gb = vec![T::zero(); c];
        for (p, taps) in partials.iter().enumerate() {
            let ch = p % c;
            for t in 0..k * k {
                gw[ch * k * k + t] = gw[ch * k * k + t] + taps[t];
            }
            gb[ch] = gb[ch] + taps[k * k];
        }
        grads.weight = Some(Tensor::new(weight.shape(), gw).expect("depthwise weight grad"));
        grads.bias = Some(Tensor::new(spec.bias_shape(), gb).expect("depthwise bias grad"));
    }
    grads
}

/// 2×2 max pooling, trailing odd row/column dropped. Returns the pooled
/// tensor and, per output element, the flat index of the winning input.
pub(crate) fn max_pool2_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let s = x.shape();
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut arg = Vec::with_capacity(out_shape.len());
    let xd = x.data();
    for p in 0..s.n * s.c {
        let base = p * s.plane();
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * s.w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    (Tensor::new(out_shape, out).expect("pool shape"), arg)
}

pub(crate) fn global_avg_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let inv = T::from_f64(1.0 / s.plane() as f64);
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(Shape::new(s.n, s.c, 1, 1), data).expect("gap shape")
}

/// Strides of `b` when broadcast against `a` (0 along size-1 axes).
pub(crate) fn broadcast_strides(a: Shape, b: Shape) -> Option<[usize; 4]> {
    let ad = a.dims();
    let bd = b.dims();
    let mut strides = [0usize; 4];
    let mut acc = 1;
    for i in (0..4).rev() {
        if bd[i] == ad[i] {
            strides[i] = if bd[i] == 1 { 0 } else { acc };
        } else if bd[i] == 1 {
            strides[i] = 0;
        } else {
            return None;
        }
        acc *= bd[i];
    }
    Some(strides)
}

/// Visit `(a_index, b_index)` for every element of `a` with `b` broadcast.
#[inline]
pub(crate) fn for_each_broadcast(a: Shape, bs: [usize; 4], mut f: impl FnMut(usize, usize)) {
    let mut ai = 0;
    for n in 0..a.n {
        for c in 0..a.c {
            for y in 0..a.h {
                let row = n * bs[0] + c * bs[1] + y * bs[2];
                for x in 0..a.w {
                    f(ai, row + x * bs[3]);
                    ai += 1;
                }
            }
        }
    }
}

pub(crate) fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let s0 = parts[0].shape();
    let c: usize = parts.iter().map(|p| p.shape().c).sum();
    let out_shape = Shape::new(s0.n, c, s0.h, s0.w);
    let mut data = Vec::with_capacity(out_shape.len());
    for n in 0..s0.n {
        for p in parts {
            let per = p.shape().c * s0.plane();
            data.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::new(out_shape, data).expect("concat shape")
}
