//! Desk-scale studies built on a small five-stage backbone: a synthetic
//! teacher/student regression comparing JPU against plain bilinear
//! upsampling, and a forward-pass timing harness.

mod bench;
mod teacher;
mod train;


use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::conv::{conv2d, relu, ConvSpec, ConvWeights};
use crate::decomp::{conv_spec_for, StageWeights};
use crate::defaults;
use crate::tensor::{Element, Rng, Tensor};
use crate::{Error, Result};

pub use bench::{bench_forward, BenchMode, BenchReport};
pub use teacher::{synthetic_teacher, TeacherBatch, TeacherDataset};
pub use train::{train_approximator, train_student, Method, Student, TrainOptions, TrainRun};

pub const MAX_MINI_CHANNELS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiniStage {
    /// 3x3 convs after the head.
    pub blocks: usize,
    pub channels: usize,
}

/// Stem (3x3, stride 1) followed by five stages `conv1..conv5`, each a 3x3
/// head that halves the resolution in stride wiring plus `blocks` 3x3 convs.
/// Every conv is followed by ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiniBackboneConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stages: [MiniStage; 5],
    pub seed: u64,
}

impl Default for MiniBackboneConfig {
    fn default() -> Self {
        let blocks = defaults::MINI_STAGE_BLOCKS;
        let ch = defaults::MINI_STAGE_CHANNELS;
        MiniBackboneConfig {
            in_channels: 3,
            stem_channels: defaults::MINI_STEM_CHANNELS,
            stages: std::array::from_fn(|k| MiniStage {
                blocks: blocks[k],
                channels: ch[k],
            }),
            seed: 0,
        }
    }
}

impl MiniBackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = std::iter::once(self.in_channels)
            .chain(std::iter::once(self.stem_channels))
            .chain(self.stages.iter().map(|s| s.channels));
        for c in widths {
            if c == 0 || c > MAX_MINI_CHANNELS {
                return Err(Error::InvalidConfig(format!(
                    "mini backbone widths must be in 1..={MAX_MINI_CHANNELS}, got {c}"
                )));
            }
        }
        Ok(())
    }

    /// Channels of the conv3, conv4 and conv5 outputs.
    pub fn feature_channels(&self) -> [usize; 3] {
        [self.stages[2].channels, self.stages[3].channels, self.stages[4].channels]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneMode {
    /// conv4 and conv5 keep stride 8; their convs are dilated instead.
    DilatedOs8,
    /// Every stage halves the resolution.
    StrideOs32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBackboneParams<T> {
    pub stem: ConvWeights<T>,
    pub stages: Vec<StageWeights<T>>,
}

impl<T: Element> MiniBackboneParams<T> {
    pub fn param_count(&self) -> usize {
        self.stem.param_count() + self.stages.iter().map(StageWeights::param_count).sum::<usize>()
    }
}

/// Uniform fan-in init with gain `sqrt(6)` (ReLU-preserving variance) and
/// zero biases, drawn from `config.seed`.
pub fn mini_backbone_init<T: Element>(config: &MiniBackboneConfig) -> Result<MiniBackboneParams<T>> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let gain = 6f64.sqrt();
    let mut conv = |cin, cout| ConvWeights::init_uniform(&ConvSpec::new(cin, cout, 3), gain, true, &mut rng);
    let stem = conv(config.in_channels, config.stem_channels)?;
    let mut cin = config.stem_channels;
    let mut stages = Vec::with_capacity(5);
    for st in &config.stages {
        let head = conv(cin, st.channels)?;
        let body = (0..st.blocks).map(|_| conv(st.channels, st.channels)).collect::<Result<_>>()?;
        stages.push(StageWeights { head, body });
        cin = st.channels;
    }
    Ok(MiniBackboneParams { stem, stages })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Features<T> {
    pub conv3: Tensor<T>,
    pub conv4: Tensor<T>,
    pub conv5: Tensor<T>,
}

pub(crate) const STAGE_NAMES: [&str; 6] = ["stem", "conv1", "conv2", "conv3", "conv4", "conv5"];

fn conv_relu<T: Element>(x: &Tensor<T>, w: &ConvWeights<T>, stride: usize, dilation: usize) -> Result<Tensor<T>> {
    Ok(relu(&conv2d(x, w, &conv_spec_for(w, stride, dilation)?)?))
}

/// Runs the backbone, reporting the wall time of each entry of
/// [`STAGE_NAMES`] to `on_stage`.
pub(crate) fn forward_timed<T: Element>(
    x: &Tensor<T>,
    params: &MiniBackboneParams<T>,
    config: &MiniBackboneConfig,
    mode: BackboneMode,
    mut on_stage: impl FnMut(usize, Duration),
) -> Result<Features<T>> {
    config.validate()?;
    let s = x.shape();
    if !s.h.is_multiple_of(32) || !s.w.is_multiple_of(32) {
        return Err(Error::incompatible(
            "mini_backbone_forward",
            format!("input spatial dims {}x{} must be divisible by 32", s.h, s.w),
        ));
    }
    if s.c != config.in_channels || params.stages.len() != 5 {
        return Err(Error::incompatible(
            "mini_backbone_forward",
            format!("input has {} channels, config expects {}", s.c, config.in_channels),
        ));
    }
    let t = Instant::now();
    let mut h = conv_relu(x, &params.stem, 1, 1)?;
    on_stage(0, t.elapsed());
    let mut outs = Vec::with_capacity(3);
    // Dilation of the grid the current stage reads in dilated wiring.
    let mut grid = 1;
    for (k, sw) in params.stages.iter().enumerate() {
        let t = Instant::now();
        let frozen = mode == BackboneMode::DilatedOs8 && k >= 3;
        h = if frozen {
            let y = conv_relu(&h, &sw.head, 1, grid)?;
            grid *= 2;
            y
        } else {
            conv_relu(&h, &sw.head, 2, 1)?
        };
        for w in &sw.body {
            h = conv_relu(&h, w, 1, grid)?;
        }
        on_stage(k + 1, t.elapsed());
        if k >= 2 {
            outs.push(h.clone());
        }
    }
    let [conv3, conv4, conv5]: [Tensor<T>; 3] = outs.try_into().expect("three outputs");
    Ok(Features { conv3, conv4, conv5 })
}

/// conv3, conv4 and conv5 features. Stride wiring yields strides 8, 16 and
/// 32; dilated wiring keeps all three at stride 8. Both modes read the same
/// parameters.
pub fn mini_backbone_forward<T: Element>(
    x: &Tensor<T>,
    params: &MiniBackboneParams<T>,
    config: &MiniBackboneConfig,
    mode: BackboneMode,
) -> Result<Features<T>> {
    forward_timed(x, params, config, mode, |_, _| {})
}
