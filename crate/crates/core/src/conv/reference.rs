use super::{ConvSpec, ConvWeights};
use crate::tensor::{Element, Tensor};
use crate::Result;

/// Naive per-output-element convolution that also counts the multiplies it
/// performs. Taps that fall into the zero padding are multiplied by an
/// explicit zero and counted, matching the analytic MAC convention.
///
/// This path shares nothing with [`super::conv2d`] beyond the spec type and
/// is the oracle the fast path is tested against.
pub fn conv2d_reference<T: Element>(
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, u64)> {
    w.check(spec)?;
    let xs = x.shape();
    let ys = spec.output_shape(xs)?;
    let cpg = spec.in_channels / spec.groups;
    let opg = spec.out_channels / spec.groups;
    let mut mults = 0u64;
    let mut out = Vec::with_capacity(ys.numel());
    for n in 0..ys.n {
        for o in 0..ys.c {
            for i in 0..ys.h {
                for j in 0..ys.w {
                    let mut acc = w.bias.as_ref().map_or(T::ZERO, |b| b[o]);
                    for ci in 0..cpg {
                        let c = (o / opg) * cpg + ci;
                        for u in 0..spec.kernel.0 {
                            for v in 0..spec.kernel.1 {
                                let yy = (i * spec.stride.0 + u * spec.dilation.0) as isize
                                    - spec.padding.0 as isize;
                                let xx = (j * spec.stride.1 + v * spec.dilation.1) as isize
                                    - spec.padding.1 as isize;
                                let inside = yy >= 0
                                    && xx >= 0
                                    && (yy as usize) < xs.h
                                    && (xx as usize) < xs.w;
                                let xv = if inside {
                                    x.at(n, c, yy as usize, xx as usize)
                                } else {
                                    T::ZERO
                                };
                                acc += w.weight.at(o, ci, u, v) * xv;
                                mults += 1;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Ok((Tensor::from_vec(ys, out)?, mults))
}
