use super::{valid_range, ConvSpec, ConvWeights};
use crate::tensor::{Element, Tensor};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: ConvWeights<T>,
}

/// Gradients of `sum(grad_out * conv2d(x, w))` with respect to the input,
/// the kernel, and the bias (present iff `w` has a bias).
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    w.check(spec)?;
    let xs = x.shape();
    let ys = spec.output_shape(xs)?;
    grad_out.expect_shape(ys)?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    let (cpg, opg) = (spec.in_per_group(), spec.out_per_group());
    let wd = w.weight.data();
    let mut gx = vec![T::ZERO; xs.numel()];
    let mut gw = vec![T::ZERO; wd.len()];

    for n in 0..xs.n {
        for o in 0..ys.c {
            let g = o / opg;
            let go = grad_out.plane(n, o);
            for ci in 0..cpg {
                let c = g * cpg + ci;
                let src = x.plane(n, c);
                let gx_base = xs.offset(n, c, 0, 0);
                let gx_plane = &mut gx[gx_base..gx_base + xs.plane()];
                for u in 0..kh {
                    let (i_lo, i_hi) = valid_range(ys.h, xs.h, sh, ph, u * dh);
                    for v in 0..kw {
                        let widx = ((o * cpg + ci) * kh + u) * kw + v;
                        let wv = wd[widx];
                        let (j_lo, j_hi) = valid_range(ys.w, xs.w, sw, pw, v * dw);
                        if j_lo == j_hi {
                            continue;
                        }
                        let mut acc = T::ZERO;
                        for i in i_lo..i_hi {
                            let r = (i * sh + u * dh - ph) * xs.w;
                            let go_row = &go[i * ys.w..(i + 1) * ys.w];
                            for j in j_lo..j_hi {
                                let at = r + j * sw + v * dw - pw;
                                let g = go_row[j];
                                acc += g * src[at];
                                gx_plane[at] += wv * g;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }

    let grad_bias = w.bias.as_ref().map(|_| {
        (0..ys.c)
            .map(|o| (0..ys.n).map(|n| grad_out.plane(n, o).iter().copied().sum::<T>()).sum())
            .collect()
    });
    Ok(ConvGrads {
        grad_x: Tensor::from_parts(xs, gx),
        grad_w: ConvWeights::new(Tensor::from_parts(w.weight.shape(), gw), grad_bias),
    })
}
