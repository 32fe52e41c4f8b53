//! Bilinear resizing with half-pixel centers.
//!
//! Output coordinate `d` along an axis of length `out` samples the source at
//! `s = (d + 0.5) * (in / out) - 0.5`, clamped to `[0, in - 1]`. With
//! `i0 = floor(s)`, `i1 = min(i0 + 1, in - 1)` and `f = s - i0`, the sample is
//! `(1 - f) * src[i0] + f * src[i1]`, applied separably: first along x within
//! each of the two source rows, then along y. Coordinates and weights are
//! computed in `f64` and rounded once to the element type.

use super::{Element, Shape, Tensor};
use crate::{Error, Result};

/// Clamped source coordinate for output index `d`.
pub fn source_coordinate(d: usize, in_len: usize, out_len: usize) -> f64 {
    let s = (d as f64 + 0.5) * (in_len as f64 / out_len as f64) - 0.5;
    s.clamp(0.0, (in_len - 1) as f64)
}

#[derive(Debug, Clone, Copy)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w0: T,
    w1: T,
}

fn axis_taps<T: Element>(in_len: usize, out_len: usize) -> Vec<Tap<T>> {
    (0..out_len)
        .map(|d| {
            let s = source_coordinate(d, in_len, out_len);
            let i0 = s.floor() as usize;
            let f = s - i0 as f64;
            Tap {
                i0,
                i1: (i0 + 1).min(in_len - 1),
                w0: T::from_f64(1.0 - f),
                w1: T::from_f64(f),
            }
        })
        .collect()
}

fn check_out(op: &'static str, h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::incompatible(op, format!("output size {h}x{w} must be positive")));
    }
    Ok(())
}

pub fn bilinear_resize<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    check_out("bilinear_resize", out_h, out_w)?;
    let s = x.shape();
    let ty = axis_taps::<T>(s.h, out_h);
    let tx = axis_taps::<T>(s.w, out_w);
    let out_shape = s.with_spatial(out_h, out_w);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            for t in &ty {
                let r0 = &plane[t.i0 * s.w..(t.i0 + 1) * s.w];
                let r1 = &plane[t.i1 * s.w..(t.i1 + 1) * s.w];
                for u in &tx {
                    let top = u.w0 * r0[u.i0] + u.w1 * r0[u.i1];
                    let bot = u.w0 * r1[u.i0] + u.w1 * r1[u.i1];
                    out.push(t.w0 * top + t.w1 * bot);
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

/// Transpose of [`bilinear_resize`]: scatters `grad_out` back onto an
/// `in_h x in_w` grid with the same interpolation weights.
pub fn bilinear_resize_backward<T: Element>(
    grad_out: &Tensor<T>,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor<T>> {
    check_out("bilinear_resize_backward", in_h, in_w)?;
    let s = grad_out.shape();
    let ty = axis_taps::<T>(in_h, s.h);
    let tx = axis_taps::<T>(in_w, s.w);
    let in_shape = Shape { h: in_h, w: in_w, ..s };
    let mut grad = vec![T::ZERO; in_shape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            let g_plane = grad_out.plane(n, c);
            let base = in_shape.offset(n, c, 0, 0);
            let dst = &mut grad[base..base + in_h * in_w];
            for (i, t) in ty.iter().enumerate() {
                for (j, u) in tx.iter().enumerate() {
                    let g = g_plane[i * s.w + j];
                    let (gt, gb) = (t.w0 * g, t.w1 * g);
                    dst[t.i0 * in_w + u.i0] += u.w0 * gt;
                    dst[t.i0 * in_w + u.i1] += u.w1 * gt;
                    dst[t.i1 * in_w + u.i0] += u.w0 * gb;
                    dst[t.i1 * in_w + u.i1] += u.w1 * gb;
                }
            }
        }
    }
    Ok(Tensor::from_parts(in_shape, grad))
}
