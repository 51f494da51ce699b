//! Same-padded, stride-1, multi-channel 2-D convolution.
//!
//! Cross-correlation convention (no kernel flip):
//!
//! ```text
//! out[o, i, j] = Σ_c Σ_{a,b} K[o, c, a, b] · x[c, i + a − ph, j + b − pw]
//! ```
//!
//! with zero padding `ph = (kh − 1)/2`, `pw = (kw − 1)/2`, so every output
//! has the spatial size of its input. Loops run in a fixed order, which
//! makes all results bit-reproducible.

use core::ops::Range;

use crate::error::{shape_err, Result};
use crate::{KernelBank, Real, Tensor};

/// Output indices `i` for which `i + offset` stays inside `0..len`.
#[inline]
fn valid_range(len: usize, offset: isize) -> Range<usize> {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    lo..hi.max(lo)
}

#[inline]
fn offsets(kh: usize, kw: usize, a: usize, b: usize) -> (isize, isize) {
    (a as isize - (kh / 2) as isize, b as isize - (kw / 2) as isize)
}

/// `dst[i, j] += w · src[i + di, j + dj]` over the valid window.
#[inline]
fn accumulate_shifted<T: Real>(
    dst: &mut [T],
    src: &[T],
    h: usize,
    w: usize,
    di: isize,
    dj: isize,
    weight: T,
) {
    let rows = valid_range(h, di);
    let cols = valid_range(w, dj);
    if cols.is_empty() {
        return;
    }
    for i in rows {
        let si = (i as isize + di) as usize;
        let d = &mut dst[i * w + cols.start..i * w + cols.end];
        let s0 = (si * w) as isize + cols.start as isize + dj;
        let s = &src[s0 as usize..s0 as usize + cols.len()];
        for (dv, &sv) in d.iter_mut().zip(s) {
            *dv = *dv + weight * sv;
        }
    }
}

/// `dst[i + di, j + dj] += w · src[i, j]` over the valid window.
#[inline]
fn scatter_shifted<T: Real>(
    dst: &mut [T],
    src: &[T],
    h: usize,
    w: usize,
    di: isize,
    dj: isize,
    weight: T,
) {
    let rows = valid_range(h, di);
    let cols = valid_range(w, dj);
    if cols.is_empty() {
        return;
    }
    for i in rows {
        let di_row = (i as isize + di) as usize;
        let d0 = (di_row * w) as isize + cols.start as isize + dj;
        let d = &mut dst[d0 as usize..d0 as usize + cols.len()];
        let s = &src[i * w + cols.start..i * w + cols.end];
        for (dv, &sv) in d.iter_mut().zip(s) {
            *dv = *dv + weight * sv;
        }
    }
}

/// `Σ_{i,j} up[i, j] · x[i + di, j + dj]` over the valid window.
#[inline]
fn correlate_shifted<T: Real>(up: &[T], x: &[T], h: usize, w: usize, di: isize, dj: isize) -> T {
    let rows = valid_range(h, di);
    let cols = valid_range(w, dj);
    let mut acc = T::zero();
    if cols.is_empty() {
        return acc;
    }
    for i in rows {
        let xi = (i as isize + di) as usize;
        let u = &up[i * w + cols.start..i * w + cols.end];
        let x0 = (xi * w) as isize + cols.start as isize + dj;
        let xs = &x[x0 as usize..x0 as usize + cols.len()];
        for (&a, &b) in u.iter().zip(xs) {
            acc = acc + a * b;
        }
    }
    acc
}

pub fn conv2d_same<T: Real>(input: &Tensor<T>, kernels: &KernelBank<T>) -> Result<Tensor<T>> {
    let (oc, ic, kh, kw) = kernels.shape();
    if input.channels() != ic {
        return Err(shape_err!(
            "conv2d_same: input has {} channels, bank expects {ic}",
            input.channels()
        ));
    }
    let (h, w) = input.spatial();
    let mut out = Tensor::zeros(oc, h, w);
    for o in 0..oc {
        let dst = out.channel_mut(o);
        for c in 0..ic {
            let src = input.channel(c);
            let k = kernels.kernel(o, c);
            for a in 0..kh {
                for b in 0..kw {
                    let (di, dj) = offsets(kh, kw, a, b);
                    accumulate_shifted(dst, src, h, w, di, dj, k[a * kw + b]);
                }
            }
        }
    }
    Ok(out)
}

/// Exact adjoint of [`conv2d_same`] for the same bank: maps an
/// `out_channels` tensor back to `in_channels`.
pub fn conv2d_adjoint<T: Real>(input: &Tensor<T>, kernels: &KernelBank<T>) -> Result<Tensor<T>> {
    let (oc, ic, kh, kw) = kernels.shape();
    if input.channels() != oc {
        return Err(shape_err!(
            "conv2d_adjoint: input has {} channels, bank produces {oc}",
            input.channels()
        ));
    }
    let (h, w) = input.spatial();
    let mut out = Tensor::zeros(ic, h, w);
    for c in 0..ic {
        let dst = out.channel_mut(c);
        for o in 0..oc {
            let src = input.channel(o);
            let k = kernels.kernel(o, c);
            for a in 0..kh {
                for b in 0..kw {
                    let (di, dj) = offsets(kh, kw, a, b);
                    scatter_shifted(dst, src, h, w, di, dj, k[a * kw + b]);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `⟨upstream, conv2d_same(input, K)⟩` w.r.t. the weights,
/// accumulated into `grad`.
pub fn conv2d_kernel_grad_into<T: Real>(
    input: &Tensor<T>,
    upstream: &Tensor<T>,
    grad: &mut KernelBank<T>,
) -> Result<()> {
    let (oc, ic, kh, kw) = grad.shape();
    if input.channels() != ic
        || upstream.channels() != oc
        || input.spatial() != upstream.spatial()
    {
        return Err(shape_err!(
            "conv2d kernel grad: input {:?}, upstream {:?}, bank {:?}",
            input.shape(),
            upstream.shape(),
            grad.shape()
        ));
    }
    let (h, w) = input.spatial();
    for o in 0..oc {
        let up = upstream.channel(o);
        for c in 0..ic {
            let x = input.channel(c);
            for a in 0..kh {
                for b in 0..kw {
                    let (di, dj) = offsets(kh, kw, a, b);
                    let g = correlate_shifted(up, x, h, w, di, dj);
                    let cur = grad.get(o, c, a, b);
                    grad.set(o, c, a, b, cur + g);
                }
            }
        }
    }
    Ok(())
}

/// Vector-Jacobian product of [`conv2d_same`]: gradients w.r.t. the input
/// and the kernel weights.
pub fn conv2d_vjp<T: Real>(
    input: &Tensor<T>,
    kernels: &KernelBank<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, KernelBank<T>)> {
    let (oc, ic, _, _) = kernels.shape();
    if input.channels() != ic
        || upstream.channels() != oc
        || input.spatial() != upstream.spatial()
    {
        return Err(shape_err!(
            "conv2d_vjp: upstream {:?} does not match conv output of input {:?} with bank {:?}",
            upstream.shape(),
            input.shape(),
            kernels.shape()
        ));
    }
    let d_input = conv2d_adjoint(upstream, kernels)?;
    let mut d_kernels = kernels.zeros_like();
    conv2d_kernel_grad_into(input, upstream, &mut d_kernels)?;
    Ok((d_input, d_kernels))
}

/// Single-channel image `Σ_i D_i * U_i` from `k` coefficient maps and a
/// `k → 1` dictionary.
pub fn dict_synthesize<T: Real>(codes: &Tensor<T>, dict: &KernelBank<T>) -> Result<Tensor<T>> {
    if dict.out_channels() != 1 || dict.in_channels() != codes.channels() {
        return Err(shape_err!(
            "dict_synthesize: dictionary {:?} is not a {}→1 bank",
            dict.shape(),
            codes.channels()
        ));
    }
    conv2d_same(codes, dict)
}
