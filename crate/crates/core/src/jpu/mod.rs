//! Joint Pyramid Upsampling.
//!
//! Three backbone features at output strides 8, 16 and 32 are each passed
//! through a 3x3 conv + ReLU into a common width `w`. The stride-16 and
//! stride-32 results are bilinearly resized (2x and 4x, one step each) to the
//! stride-8 grid and concatenated into `y_c` with `3w` channels. One
//! separable branch per dilation rate (3x3 depthwise at that dilation, 1x1
//! pointwise to `w`, ReLU) reads `y_c`; the branch outputs are concatenated
//! in rate order and fused by a final 3x3 conv + ReLU.

mod io;

use serde::{Deserialize, Serialize};

use crate::conv::{
    conv2d, conv2d_backward, depthwise_spec, pointwise_spec, relu, relu_backward,
    separable_conv2d_backward, ConvSpec, ConvWeights,
};
use crate::tensor::{
    bilinear_resize, bilinear_resize_backward, concat_channels, split_channels, Element, Rng,
    Tensor,
};
use crate::{Error, Result};

pub use io::{load_params, save_params, MANIFEST_FILE};

pub const DEFAULT_DILATION_RATES: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JpuConfig {
    /// Channels of the stride-8, stride-16 and stride-32 inputs.
    pub in_channels: [usize; 3],
    /// Embedding width of every level and every branch.
    pub width: usize,
    pub dilation_rates: Vec<usize>,
    pub out_channels: usize,
}

impl JpuConfig {
    /// Default rates `[1, 2, 4, 8]` and `4 * width` output channels.
    pub fn new(in_channels: [usize; 3], width: usize) -> Self {
        JpuConfig {
            in_channels,
            width,
            dilation_rates: DEFAULT_DILATION_RATES.to_vec(),
            out_channels: 4 * width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels.contains(&0) || self.width == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(format!("zero channel count in {self:?}")));
        }
        let rates = &self.dilation_rates;
        if rates.is_empty() || rates[0] == 0 || rates.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidConfig(format!(
                "dilation rates {rates:?} must be non-empty, positive and strictly increasing"
            )));
        }
        Ok(())
    }

    pub fn concat_channels(&self) -> usize {
        3 * self.width
    }

    pub fn level_spec(&self, level: usize) -> ConvSpec {
        ConvSpec::new(self.in_channels[level], self.width, 3).padding(1)
    }

    pub fn depthwise_spec(&self, branch: usize) -> ConvSpec {
        depthwise_spec(self.concat_channels(), self.dilation_rates[branch])
    }

    pub fn pointwise_spec(&self) -> ConvSpec {
        pointwise_spec(self.concat_channels(), self.width)
    }

    pub fn fusion_spec(&self) -> ConvSpec {
        ConvSpec::new(self.dilation_rates.len() * self.width, self.out_channels, 3).padding(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableWeights<T> {
    pub depthwise: ConvWeights<T>,
    pub pointwise: ConvWeights<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JpuParams<T> {
    /// Level convs for the stride-8, 16 and 32 inputs.
    pub levels: [ConvWeights<T>; 3],
    /// One separable branch per dilation rate, in rate order.
    pub branches: Vec<SeparableWeights<T>>,
    pub fusion: ConvWeights<T>,
}

impl<T: Element> JpuParams<T> {
    pub fn check(&self, config: &JpuConfig) -> Result<()> {
        config.validate()?;
        for (k, w) in self.levels.iter().enumerate() {
            w.check(&config.level_spec(k))?;
        }
        if self.branches.len() != config.dilation_rates.len() {
            return Err(Error::InvalidConfig(format!(
                "{} branches for {} dilation rates",
                self.branches.len(),
                config.dilation_rates.len()
            )));
        }
        for (r, b) in self.branches.iter().enumerate() {
            b.depthwise.check(&config.depthwise_spec(r))?;
            b.pointwise.check(&config.pointwise_spec())?;
        }
        self.fusion.check(&config.fusion_spec())
    }

    /// Every conv in a fixed order: levels, then (depthwise, pointwise) per
    /// branch, then fusion.
    pub fn convs(&self) -> Vec<&ConvWeights<T>> {
        let mut v: Vec<_> = self.levels.iter().collect();
        for b in &self.branches {
            v.push(&b.depthwise);
            v.push(&b.pointwise);
        }
        v.push(&self.fusion);
        v
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|w| w.param_count()).sum()
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T + Copy) -> Result<Self> {
        if self.branches.len() != other.branches.len() {
            return Err(Error::incompatible("JpuParams::zip_map", "branch counts differ"));
        }
        let [a, b, c] = &self.levels;
        let [x, y, z] = &other.levels;
        Ok(JpuParams {
            levels: [a.zip_map(x, f)?, b.zip_map(y, f)?, c.zip_map(z, f)?],
            branches: self
                .branches
                .iter()
                .zip(&other.branches)
                .map(|(p, q)| {
                    Ok(SeparableWeights {
                        depthwise: p.depthwise.zip_map(&q.depthwise, f)?,
                        pointwise: p.pointwise.zip_map(&q.pointwise, f)?,
                    })
                })
                .collect::<Result<_>>()?,
            fusion: self.fusion.zip_map(&other.fusion, f)?,
        })
    }

    /// Every weight then bias value, conv by conv in [`Self::convs`] order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.param_count());
        for w in self.convs() {
            v.extend_from_slice(w.weight.data());
            v.extend(w.bias.iter().flatten().copied());
        }
        v
    }

    /// Inverse of [`Self::to_flat`] for parameters shaped like `self`.
    pub fn from_flat_like(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(Error::incompatible(
                "JpuParams::from_flat_like",
                format!("expected {} values, got {}", self.param_count(), flat.len()),
            ));
        }
        let mut it = flat.iter().copied();
        let mut take = |w: &ConvWeights<T>| ConvWeights {
            weight: Tensor::from_parts(w.weight.shape(), it.by_ref().take(w.weight.len()).collect()),
            bias: w.bias.as_ref().map(|b| it.by_ref().take(b.len()).collect()),
        };
        let levels = [take(&self.levels[0]), take(&self.levels[1]), take(&self.levels[2])];
        let branches = self
            .branches
            .iter()
            .map(|b| SeparableWeights {
                depthwise: take(&b.depthwise),
                pointwise: take(&b.pointwise),
            })
            .collect();
        let fusion = take(&self.fusion);
        Ok(JpuParams { levels, branches, fusion })
    }

    /// Named tensors in [`Self::convs`] order. Biases become `(len, 1, 1, 1)`
    /// tensors.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut names = vec!["level3".to_string(), "level4".into(), "level5".into()];
        for r in 0..self.branches.len() {
            names.push(format!("branch{r}.depthwise"));
            names.push(format!("branch{r}.pointwise"));
        }
        names.push("fusion".into());
        let mut out = vec![];
        for (name, w) in names.into_iter().zip(self.convs()) {
            out.push((format!("{name}.weight"), w.weight.clone()));
            if let Some(b) = &w.bias {
                let t = Tensor::from_parts(crate::Shape { n: b.len(), c: 1, h: 1, w: 1 }, b.clone());
                out.push((format!("{name}.bias"), t));
            }
        }
        out
    }
}

/// Fan-in scaled uniform weights (`bound = sqrt(1 / fan_in)`), zero biases.
/// Depthwise convs carry no bias.
pub fn jpu_init<T: Element>(config: &JpuConfig, rng: &mut Rng) -> Result<JpuParams<T>> {
    config.validate()?;
    let levels = [
        ConvWeights::init_uniform(&config.level_spec(0), 1.0, true, rng)?,
        ConvWeights::init_uniform(&config.level_spec(1), 1.0, true, rng)?,
        ConvWeights::init_uniform(&config.level_spec(2), 1.0, true, rng)?,
    ];
    let branches = (0..config.dilation_rates.len())
        .map(|r| {
            Ok(SeparableWeights {
                depthwise: ConvWeights::init_uniform(&config.depthwise_spec(r), 1.0, false, rng)?,
                pointwise: ConvWeights::init_uniform(&config.pointwise_spec(), 1.0, true, rng)?,
            })
        })
        .collect::<Result<_>>()?;
    let fusion = ConvWeights::init_uniform(&config.fusion_spec(), 1.0, true, rng)?;
    Ok(JpuParams {
        levels,
        branches,
        fusion,
    })
}

/// Intermediates kept by [`jpu_forward`] for [`jpu_backward`].
#[derive(Debug, Clone)]
pub struct JpuCache<T> {
    pub inputs: [Tensor<T>; 3],
    pub level_pre: [Tensor<T>; 3],
    pub y_c: Tensor<T>,
    pub depthwise_out: Vec<Tensor<T>>,
    pub branch_pre: Vec<Tensor<T>>,
    pub branch_cat: Tensor<T>,
    pub fusion_pre: Tensor<T>,
}

pub fn jpu_forward<T: Element>(
    c3: &Tensor<T>,
    c4: &Tensor<T>,
    c5: &Tensor<T>,
    params: &JpuParams<T>,
    config: &JpuConfig,
) -> Result<(Tensor<T>, JpuCache<T>)> {
    params.check(config)?;
    let (s3, s4, s5) = (c3.shape(), c4.shape(), c5.shape());
    let pyramid_ok = s4.n == s3.n
        && s5.n == s3.n
        && 2 * s4.h == s3.h
        && 2 * s4.w == s3.w
        && 4 * s5.h == s3.h
        && 4 * s5.w == s3.w;
    if !pyramid_ok {
        return Err(Error::incompatible(
            "jpu_forward",
            format!("inputs {s3}, {s4}, {s5} are not a stride 8/16/32 pyramid"),
        ));
    }
    let inputs = [c3.clone(), c4.clone(), c5.clone()];
    let mut level_pre = Vec::with_capacity(3);
    let mut level_act = Vec::with_capacity(3);
    for (k, x) in inputs.iter().enumerate() {
        let pre = conv2d(x, &params.levels[k], &config.level_spec(k))?;
        let act = relu(&pre);
        level_act.push(if k == 0 { act } else { bilinear_resize(&act, s3.h, s3.w)? });
        level_pre.push(pre);
    }
    let y_c = concat_channels(&level_act.iter().collect::<Vec<_>>())?;

    let mut depthwise_out = Vec::with_capacity(params.branches.len());
    let mut branch_pre = Vec::with_capacity(params.branches.len());
    let mut branch_act = Vec::with_capacity(params.branches.len());
    for (r, b) in params.branches.iter().enumerate() {
        let mid = conv2d(&y_c, &b.depthwise, &config.depthwise_spec(r))?;
        let pre = conv2d(&mid, &b.pointwise, &config.pointwise_spec())?;
        branch_act.push(relu(&pre));
        depthwise_out.push(mid);
        branch_pre.push(pre);
    }
    let branch_cat = concat_channels(&branch_act.iter().collect::<Vec<_>>())?;
    let fusion_pre = conv2d(&branch_cat, &params.fusion, &config.fusion_spec())?;
    let y = relu(&fusion_pre);
    let level_pre: [Tensor<T>; 3] = level_pre.try_into().expect("three levels");
    Ok((
        y,
        JpuCache {
            inputs,
            level_pre,
            y_c,
            depthwise_out,
            branch_pre,
            branch_cat,
            fusion_pre,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct JpuGrads<T> {
    pub params: JpuParams<T>,
    /// Gradients with respect to the stride-8, 16 and 32 inputs.
    pub inputs: [Tensor<T>; 3],
}

pub fn jpu_backward<T: Element>(
    cache: &JpuCache<T>,
    params: &JpuParams<T>,
    config: &JpuConfig,
    grad_y: &Tensor<T>,
) -> Result<JpuGrads<T>> {
    params.check(config)?;
    let g_fusion_pre = relu_backward(&cache.fusion_pre, grad_y)?;
    let fusion = conv2d_backward(&cache.branch_cat, &params.fusion, &config.fusion_spec(), &g_fusion_pre)?;
    let widths = vec![config.width; params.branches.len()];
    let g_branches = split_channels(&fusion.grad_x, &widths)?;

    let mut g_yc: Option<Tensor<T>> = None;
    let mut branches = Vec::with_capacity(params.branches.len());
    for (r, b) in params.branches.iter().enumerate() {
        let g_pre = relu_backward(&cache.branch_pre[r], &g_branches[r])?;
        let g = separable_conv2d_backward(
            &cache.y_c,
            &cache.depthwise_out[r],
            &b.depthwise,
            &b.pointwise,
            config.dilation_rates[r],
            &g_pre,
        )?;
        g_yc = Some(match g_yc {
            None => g.grad_x,
            Some(acc) => acc.add(&g.grad_x)?,
        });
        branches.push(SeparableWeights {
            depthwise: g.depthwise,
            pointwise: g.pointwise,
        });
    }
    let g_yc = g_yc.expect("at least one branch");
    let g_levels = split_channels(&g_yc, &[config.width; 3])?;

    let mut level_grads = Vec::with_capacity(3);
    let mut input_grads = Vec::with_capacity(3);
    for k in 0..3 {
        let in_shape = cache.level_pre[k].shape();
        let g_act = if k == 0 {
            g_levels[0].clone()
        } else {
            bilinear_resize_backward(&g_levels[k], in_shape.h, in_shape.w)?
        };
        let g_pre = relu_backward(&cache.level_pre[k], &g_act)?;
        let g = conv2d_backward(&cache.inputs[k], &params.levels[k], &config.level_spec(k), &g_pre)?;
        level_grads.push(g.grad_w);
        input_grads.push(g.grad_x);
    }
    Ok(JpuGrads {
        params: JpuParams {
            levels: level_grads.try_into().expect("three levels"),
            branches,
            fusion: fusion.grad_w,
        },
        inputs: input_grads.try_into().expect("three levels"),
    })
}
