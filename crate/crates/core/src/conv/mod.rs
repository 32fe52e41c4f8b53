//! Direct 2-D convolution over NCHW tensors.
//!
//! For output `(n, o, i, j)` the accumulator starts at `bias[o]` (or zero)
//! and adds `w[o, c, u, v] * x[n, g*cpg + c, i*sh - ph + u*dh, j*sw - pw + v*dw]`
//! for `c`, then `u`, then `v` in increasing order, skipping taps that land
//! in the zero padding. That per-element order is fixed, so results are
//! bit-reproducible.

mod backward;
mod reference;
mod separable;

use serde::{Deserialize, Serialize};

use crate::tensor::{Element, Rng, Shape, Tensor};
use crate::{Error, Result};

pub use backward::{conv2d_backward, ConvGrads};
pub use reference::conv2d_reference;
pub use separable::{
    depthwise_spec, pointwise_spec, separable_conv2d, separable_conv2d_backward, SeparableGrads,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    /// Square `k x k` kernel, stride 1, dilation 1, no padding, one group.
    pub fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (1, 1),
            dilation: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> Result<Shape> {
        Shape::new(self.out_channels, self.in_per_group(), self.kernel.0, self.kernel.1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
            self.stride.0,
            self.stride.1,
            self.dilation.0,
            self.dilation.1,
            self.groups,
        ];
        if positive.contains(&0) {
            return Err(Error::InvalidConv(format!("zero-valued field in {self:?}")));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::InvalidConv(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    /// `floor((in + 2p - d(k-1) - 1) / s) + 1` per axis; errors when either
    /// axis would be empty.
    pub fn output_hw(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let axis = |len: usize, k: usize, s: usize, d: usize, p: usize| {
            let span = d * (k - 1) + 1;
            (len + 2 * p).checked_sub(span).map(|r| r / s + 1)
        };
        match (
            axis(in_h, self.kernel.0, self.stride.0, self.dilation.0, self.padding.0),
            axis(in_w, self.kernel.1, self.stride.1, self.dilation.1, self.padding.1),
        ) {
            (Some(h), Some(w)) => Ok((h, w)),
            _ => Err(Error::InvalidConv(format!(
                "input {in_h}x{in_w} too small for {self:?}"
            ))),
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::InvalidConv(format!(
                "input has {} channels, spec expects {}",
                input.c, self.in_channels
            )));
        }
        let (h, w) = self.output_hw(input.h, input.w)?;
        Ok(Shape {
            n: input.n,
            c: self.out_channels,
            h,
            w,
        })
    }
}

/// Kernel `(out_channels, in_channels / groups, kh, kw)` plus optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Element> ConvWeights<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Vec<T>>) -> Self {
        ConvWeights { weight, bias }
    }

    /// Fan-in scaled uniform init on `[-bound, bound)` with
    /// `bound = gain * sqrt(1 / fan_in)`; bias, when requested, is zero.
    pub fn init_uniform(spec: &ConvSpec, gain: f64, with_bias: bool, rng: &mut Rng) -> Result<Self> {
        let ws = spec.weight_shape()?;
        let fan_in = (ws.c * ws.h * ws.w) as f64;
        let bound = gain * (1.0 / fan_in).sqrt();
        Ok(ConvWeights {
            weight: Tensor::random_uniform(ws, rng, -bound, bound)?,
            bias: with_bias.then(|| vec![T::ZERO; spec.out_channels]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ConvWeights {
            weight: Tensor::from_parts(self.weight.shape(), vec![T::ZERO; self.weight.len()]),
            bias: self.bias.as_ref().map(|b| vec![T::ZERO; b.len()]),
        }
    }

    /// Elementwise combination with a structurally identical set of weights.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T + Copy) -> Result<Self> {
        let bias = match (&self.bias, &other.bias) {
            (Some(a), Some(b)) if a.len() == b.len() => {
                Some(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
            }
            (None, None) => None,
            _ => return Err(Error::incompatible("ConvWeights::zip_map", "bias layout differs")),
        };
        Ok(ConvWeights {
            weight: self.weight.zip_map(&other.weight, f)?,
            bias,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn check(&self, spec: &ConvSpec) -> Result<()> {
        spec.validate()?;
        self.weight.expect_shape(spec.weight_shape()?)?;
        if let Some(b) = &self.bias {
            if b.len() != spec.out_channels {
                return Err(Error::InvalidConv(format!(
                    "bias has {} entries for {} output channels",
                    b.len(),
                    spec.out_channels
                )));
            }
        }
        Ok(())
    }
}

/// Range of output indices `o` whose input coordinate `o*s - p + off` is in
/// `[0, len)`.
#[inline]
pub(crate) fn valid_range(out_len: usize, len: usize, s: usize, p: usize, off: usize) -> (usize, usize) {
    // o*s + off >= p  and  o*s + off < p + len
    let lo = if off >= p { 0 } else { (p - off).div_ceil(s).min(out_len) };
    let hi = if p + len > off {
        (p + len - off).div_ceil(s).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv2d<T: Element>(x: &Tensor<T>, w: &ConvWeights<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    w.check(spec)?;
    let xs = x.shape();
    let ys = spec.output_shape(xs)?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    let (cpg, opg) = (spec.in_per_group(), spec.out_per_group());
    let wd = w.weight.data();
    let mut out = vec![T::ZERO; ys.numel()];

    for n in 0..xs.n {
        for o in 0..ys.c {
            let g = o / opg;
            let base = ys.offset(n, o, 0, 0);
            let dst = &mut out[base..base + ys.plane()];
            if let Some(b) = &w.bias {
                dst.fill(b[o]);
            }
            for ci in 0..cpg {
                let src = x.plane(n, g * cpg + ci);
                for u in 0..kh {
                    let (i_lo, i_hi) = valid_range(ys.h, xs.h, sh, ph, u * dh);
                    for v in 0..kw {
                        let wv = wd[((o * cpg + ci) * kh + u) * kw + v];
                        let (j_lo, j_hi) = valid_range(ys.w, xs.w, sw, pw, v * dw);
                        if j_lo == j_hi {
                            continue;
                        }
                        for i in i_lo..i_hi {
                            let row = &src[(i * sh + u * dh - ph) * xs.w..];
                            let out_row = &mut dst[i * ys.w..(i + 1) * ys.w];
                            if sw == 1 {
                                let sx = &row[j_lo + v * dw - pw..j_hi + v * dw - pw];
                                for (acc, &xv) in out_row[j_lo..j_hi].iter_mut().zip(sx) {
                                    *acc += wv * xv;
                                }
                            } else {
                                for j in j_lo..j_hi {
                                    out_row[j] += wv * row[j * sw + v * dw - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(ys, out))
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes `grad_out` where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward<T: Element>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(grad_out, |v, g| if v > T::ZERO { g } else { T::ZERO })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::max_abs_diff;

    fn row(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn one_by_one_identity() {
        let x = Tensor::<f64>::random_uniform([2, 1, 5, 4], &mut Rng::new(1), -1.0, 1.0).unwrap();
        let w = ConvWeights::new(Tensor::ones([1, 1, 1, 1]).unwrap(), Some(vec![0.0]));
        assert_eq!(conv2d(&x, &w, &ConvSpec::new(1, 1, 1)).unwrap(), x);
    }

    #[test]
    fn dilated_row_example() {
        // taps [1, 0, -1] at offsets -2, 0, +2:
        // y[i] = x[i-2] - x[i+2] -> [0-3, 0-4, 1-0, 2-0]
        let w = ConvWeights::new(Tensor::from_vec([1, 1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap(), None);
        let mut spec = ConvSpec::new(1, 1, 3).dilation(2).padding(2);
        spec.kernel = (1, 3);
        spec.dilation = (1, 2);
        spec.padding = (0, 2);
        let y = conv2d(&row(&[1.0, 2.0, 3.0, 4.0]), &w, &spec).unwrap();
        assert_eq!(y.data(), &[-3.0, -4.0, 1.0, 2.0]);
    }

    #[test]
    fn output_dims_formula() {
        let spec = ConvSpec::new(1, 1, 3).stride(2).padding(1);
        assert_eq!(spec.output_hw(8, 7).unwrap(), (4, 4));
        let spec = ConvSpec::new(1, 1, 3).dilation(4).padding(4);
        assert_eq!(spec.output_hw(8, 8).unwrap(), (8, 8));
        assert!(ConvSpec::new(1, 1, 5).output_hw(4, 9).is_err());
    }

    #[test]
    fn errors_on_bad_specs() {
        let x = Tensor::<f64>::zeros([1, 3, 4, 4]).unwrap();
        let w = ConvWeights::new(Tensor::zeros([2, 3, 3, 3]).unwrap(), None);
        assert!(conv2d(&x, &w, &ConvSpec::new(2, 2, 3)).is_err());
        assert!(conv2d(&x, &w, &ConvSpec::new(3, 2, 3).groups(2)).is_err());
        let big = ConvWeights::new(Tensor::zeros([2, 3, 5, 5]).unwrap(), None);
        assert!(conv2d(&x, &big, &ConvSpec::new(3, 2, 5)).is_err());
        let bad_bias = ConvWeights::new(Tensor::zeros([2, 3, 3, 3]).unwrap(), Some(vec![0.0]));
        assert!(conv2d(&x, &bad_bias, &ConvSpec::new(3, 2, 3)).is_err());
    }

    #[test]
    fn matches_reference_on_mixed_specs() {
        let mut rng = Rng::new(77);
        for _ in 0..50 {
            let groups = [1, 2][rng.below(2)];
            let spec = ConvSpec {
                in_channels: groups * rng.range(1, 3),
                out_channels: groups * rng.range(1, 3),
                kernel: (rng.range(1, 3), rng.range(1, 3)),
                stride: (rng.range(1, 3), rng.range(1, 3)),
                dilation: (rng.range(1, 3), rng.range(1, 3)),
                padding: (rng.range(0, 3), rng.range(0, 3)),
                groups,
            };
            let (h, w) = (rng.range(5, 9), rng.range(5, 9));
            let x = Tensor::<f64>::random_uniform([2, spec.in_channels, h, w], &mut rng, -1.0, 1.0)
                .unwrap();
            let wt = ConvWeights::init_uniform(&spec, 1.0, true, &mut rng).unwrap();
            let wt = ConvWeights {
                bias: Some((0..spec.out_channels).map(|i| i as f64 * 0.1).collect()),
                ..wt
            };
            let Ok(fast) = conv2d(&x, &wt, &spec) else {
                continue;
            };
            let (slow, _) = conv2d_reference(&x, &wt, &spec).unwrap();
            assert!(max_abs_diff(&fast, &slow).unwrap() <= 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn relu_cases() {
        let neg = Tensor::<f64>::full([1, 2, 2, 2], -0.5).unwrap();
        assert_eq!(relu(&neg), Tensor::zeros([1, 2, 2, 2]).unwrap());
        let pos = Tensor::<f64>::full([1, 2, 2, 2], 0.5).unwrap();
        assert_eq!(relu(&pos), pos);
        let x = Tensor::<f64>::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::<f64>::ones([1, 1, 1, 3]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn padding_wider_than_map() {
        let mut rng = Rng::new(12);
        let spec = ConvSpec::new(3, 3, 3).groups(3).dilation(8).padding(8);
        let x = Tensor::<f64>::random_uniform([2, 3, 4, 4], &mut rng, -1.0, 1.0).unwrap();
        let w = ConvWeights::init_uniform(&spec, 1.0, true, &mut rng).unwrap();
        let (want, _) = conv2d_reference(&x, &w, &spec).unwrap();
        assert!(max_abs_diff(&conv2d(&x, &w, &spec).unwrap(), &want).unwrap() < 1e-15);
        let g = conv2d_backward(&x, &w, &spec, &Tensor::ones(want.shape()).unwrap()).unwrap();
        assert_eq!(g.grad_x.shape(), x.shape());
    }

    #[test]
    fn valid_range_brute_force() {
        for out_len in 1..6 {
            for len in 1..8 {
                for s in 1..4 {
                    for p in 0..10 {
                        for off in 0..7 {
                            let (lo, hi) = valid_range(out_len, len, s, p, off);
                            assert!(lo <= hi && hi <= out_len);
                            for o in 0..out_len {
                                let c = (o * s + off) as isize - p as isize;
                                let inside = c >= 0 && (c as usize) < len;
                                assert_eq!(inside, o >= lo && o < hi, "{out_len} {len} {s} {p} {off} {o}");
                            }
                        }
                    }
                }
            }
        }
    }
}
