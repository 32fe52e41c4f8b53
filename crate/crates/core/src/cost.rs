//! Analytic cost model for ResNet-style bottleneck backbones.
//!
//! Costs are counted in multiply-accumulates (MACs):
//! `kh * kw * (in_ch / groups) * out_ch * out_h * out_w` per conv, every tap
//! counted including those that land in zero padding. ReLU, pooling,
//! concatenation and other elementwise work are not counted. Bilinear resizing
//! inside JPU is charged [`RESIZE_MACS_PER_ELEM`] MACs per output element.
//! Bias additions are tracked separately in `bias_adds`.
//!
//! Bottleneck blocks put the stride on the leading 1x1 reduce conv and on the
//! projection shortcut, so every conv of a block runs at the block's output
//! resolution. In [`CostMode::DilatedOs8`] every downsampling that would
//! take the output stride past 8 is removed and the 3x3 convs of the frozen
//! stages get dilation 2, 4, ...

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::conv::ConvSpec;
use crate::jpu::JpuConfig;
use crate::{Error, Result};

pub const RESIZE_MACS_PER_ELEM: u64 = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub macs: u64,
    pub params: u64,
    /// Output elements (batch 1).
    pub activation_elems: u64,
    pub bias_adds: u64,
}

impl std::ops::AddAssign for LayerCost {
    fn add_assign(&mut self, o: LayerCost) {
        self.macs += o.macs;
        self.params += o.params;
        self.activation_elems += o.activation_elems;
        self.bias_adds += o.bias_adds;
    }
}

pub fn conv_cost(spec: &ConvSpec, in_hw: (usize, usize), bias: bool) -> Result<LayerCost> {
    spec.validate()?;
    let (oh, ow) = spec.output_hw(in_hw.0, in_hw.1)?;
    let out_elems = (spec.out_channels * oh * ow) as u64;
    let taps = (spec.kernel.0 * spec.kernel.1 * spec.in_per_group()) as u64;
    Ok(LayerCost {
        macs: taps * out_elems,
        params: taps * spec.out_channels as u64 + if bias { spec.out_channels as u64 } else { 0 },
        activation_elems: out_elems,
        bias_adds: if bias { out_elems } else { 0 },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BottleneckStage {
    pub name: String,
    pub blocks: usize,
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    /// Whether the first block halves the resolution (in stride wiring).
    pub downsample: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BackboneSpec {
    pub name: String,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stages: Vec<BottleneckStage>,
}

impl BackboneSpec {
    /// `resnet50` or `resnet101`: 7x7/2 stem, 3x3/2 max-pool, then bottleneck
    /// stages `conv2..conv5` with widths 256/512/1024/2048 and mid widths
    /// 64/128/256/512.
    pub fn preset(name: &str) -> Result<BackboneSpec> {
        let blocks = match name {
            "resnet50" => [3, 4, 6, 3],
            "resnet101" => [3, 4, 23, 3],
            _ => return Err(Error::UnknownPreset(name.to_string())),
        };
        let mut stages = vec![];
        let mut cin = 64;
        for (i, &b) in blocks.iter().enumerate() {
            let mid = 64 << i;
            stages.push(BottleneckStage {
                name: format!("conv{}", i + 2),
                blocks: b,
                in_channels: cin,
                mid_channels: mid,
                out_channels: 4 * mid,
                downsample: i > 0,
            });
            cin = 4 * mid;
        }
        Ok(BackboneSpec {
            name: name.to_string(),
            in_channels: 3,
            stem_channels: 64,
            stages,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut c = self.stem_channels;
        for s in &self.stages {
            if s.in_channels != c || s.blocks == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {} breaks the channel chain or has no blocks",
                    s.name
                )));
            }
            c = s.out_channels;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Downsampling stops at output stride 8; later stages are dilated.
    DilatedOs8,
    /// All strides kept (output stride 32) plus JPU over OS 8/16/32.
    StrideOs32PlusJpu,
}

impl fmt::Display for CostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostMode::DilatedOs8 => "dilated_os8",
            CostMode::StrideOs32PlusJpu => "stride_os32_plus_jpu",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    MaxPool,
    Resize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerEntry {
    pub name: String,
    pub stage: String,
    pub block: Option<usize>,
    pub kind: LayerKind,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
    pub cost: LayerCost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCost {
    pub name: String,
    pub output_stride: usize,
    /// Dilation of the stage's 3x3 convs.
    pub dilation: usize,
    /// Elements of the stage's final output.
    pub output_elems: u64,
    pub cost: LayerCost,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub backbone: String,
    pub mode: CostMode,
    pub input_hw: (usize, usize),
    pub jpu: Option<JpuConfig>,
    pub layers: Vec<LayerEntry>,
    pub stages: Vec<StageCost>,
    pub total: LayerCost,
}

impl CostReport {
    pub fn stage(&self, name: &str) -> Option<&StageCost> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// MACs of one bottleneck block.
    pub fn block_macs(&self, stage: &str, block: usize) -> u64 {
        self.layers
            .iter()
            .filter(|l| l.stage == stage && l.block == Some(block))
            .map(|l| l.cost.macs)
            .sum()
    }
}

struct Builder {
    layers: Vec<LayerEntry>,
}

impl Builder {
    fn conv(
        &mut self,
        name: String,
        stage: &str,
        block: Option<usize>,
        spec: ConvSpec,
        in_hw: (usize, usize),
        bias: bool,
    ) -> Result<(usize, usize)> {
        let out_hw = spec.output_hw(in_hw.0, in_hw.1)?;
        self.layers.push(LayerEntry {
            name,
            stage: stage.to_string(),
            block,
            kind: LayerKind::Conv,
            in_hw,
            out_hw,
            cost: conv_cost(&spec, in_hw, bias)?,
        });
        Ok(out_hw)
    }

    fn elementwise(&mut self, name: String, stage: &str, kind: LayerKind, channels: usize, in_hw: (usize, usize), out_hw: (usize, usize)) {
        let elems = (channels * out_hw.0 * out_hw.1) as u64;
        let macs = if kind == LayerKind::Resize { RESIZE_MACS_PER_ELEM * elems } else { 0 };
        self.layers.push(LayerEntry {
            name,
            stage: stage.to_string(),
            block: None,
            kind,
            in_hw,
            out_hw,
            cost: LayerCost {
                macs,
                activation_elems: elems,
                ..LayerCost::default()
            },
        });
    }
}

/// Layers of a JPU reading features of spatial size `hw8`, `hw8 / 2` and
/// `hw8 / 4`, tagged with stage `"jpu"`.
pub fn jpu_layers(config: &JpuConfig, hw8: (usize, usize)) -> Result<Vec<LayerEntry>> {
    config.validate()?;
    let mut b = Builder { layers: vec![] };
    let hws = [hw8, (hw8.0 / 2, hw8.1 / 2), (hw8.0 / 4, hw8.1 / 4)];
    for (k, &hw) in hws.iter().enumerate() {
        let out = b.conv(format!("jpu.level{}", k + 3), "jpu", None, config.level_spec(k), hw, true)?;
        if k > 0 {
            b.elementwise(format!("jpu.resize{}", k + 3), "jpu", LayerKind::Resize, config.width, out, hw8);
        }
    }
    for (r, d) in config.dilation_rates.iter().enumerate() {
        b.conv(format!("jpu.branch{r}_d{d}.depthwise"), "jpu", None, config.depthwise_spec(r), hw8, false)?;
        b.conv(format!("jpu.branch{r}_d{d}.pointwise"), "jpu", None, config.pointwise_spec(), hw8, true)?;
    }
    b.conv("jpu.fusion".into(), "jpu", None, config.fusion_spec(), hw8, true)?;
    Ok(b.layers)
}

pub fn backbone_cost(
    spec: &BackboneSpec,
    mode: CostMode,
    input_hw: (usize, usize),
    jpu: Option<&JpuConfig>,
) -> Result<CostReport> {
    spec.validate()?;
    let mut b = Builder { layers: vec![] };
    let mut stages = vec![];
    let mut stage_meta = vec![];

    let stem = ConvSpec::new(spec.in_channels, spec.stem_channels, 7).stride(2).padding(3);
    let hw = b.conv("conv1.stem".into(), "conv1", None, stem, input_hw, false)?;
    let pool = ConvSpec::new(spec.stem_channels, spec.stem_channels, 3).stride(2).padding(1);
    let pooled = pool.output_hw(hw.0, hw.1)?;
    b.elementwise("conv1.pool".into(), "conv1", LayerKind::MaxPool, spec.stem_channels, hw, pooled);
    stage_meta.push(("conv1".to_string(), 4, 1, spec.stem_channels, pooled));

    let mut hw = pooled;
    let mut os = 4;
    let mut dilation = 1;
    let mut stage_outputs = vec![];
    for st in &spec.stages {
        let mut stride = 1;
        if st.downsample {
            if mode == CostMode::DilatedOs8 && os >= 8 {
                dilation *= 2;
            } else {
                stride = 2;
                os *= 2;
            }
        }
        for blk in 0..st.blocks {
            let (cin, s) = if blk == 0 { (st.in_channels, stride) } else { (st.out_channels, 1) };
            let name = |l: &str| format!("{}.block{}.{}", st.name, blk + 1, l);
            let block = Some(blk);
            let reduce = ConvSpec::new(cin, st.mid_channels, 1).stride(s);
            let out = b.conv(name("reduce"), &st.name, block, reduce, hw, false)?;
            let mid = ConvSpec::new(st.mid_channels, st.mid_channels, 3).dilation(dilation).padding(dilation);
            let out = b.conv(name("conv3x3"), &st.name, block, mid, out, false)?;
            let expand = ConvSpec::new(st.mid_channels, st.out_channels, 1);
            let out = b.conv(name("expand"), &st.name, block, expand, out, false)?;
            if blk == 0 && (s != 1 || cin != st.out_channels) {
                let proj = ConvSpec::new(cin, st.out_channels, 1).stride(s);
                b.conv(name("projection"), &st.name, block, proj, hw, false)?;
            }
            hw = out;
        }
        stage_meta.push((st.name.clone(), os, dilation, st.out_channels, hw));
        stage_outputs.push((st.out_channels, hw));
    }

    let jpu_config = match mode {
        CostMode::DilatedOs8 => None,
        CostMode::StrideOs32PlusJpu => {
            let n = stage_outputs.len();
            if n < 3 {
                return Err(Error::InvalidConfig("JPU needs at least three stages".into()));
            }
            let last3 = [stage_outputs[n - 3], stage_outputs[n - 2], stage_outputs[n - 1]];
            let cfg = match jpu {
                Some(c) => c.clone(),
                None => JpuConfig::new(last3.map(|(c, _)| c), crate::defaults::COST_JPU_WIDTH),
            };
            if cfg.in_channels != last3.map(|(c, _)| c) {
                return Err(Error::InvalidConfig(format!(
                    "JPU input channels {:?} do not match backbone outputs {:?}",
                    cfg.in_channels,
                    last3.map(|(c, _)| c)
                )));
            }
            let hw8 = last3[0].1;
            b.layers.extend(jpu_layers(&cfg, hw8)?);
            stage_meta.push(("jpu".into(), os / 4, 1, cfg.out_channels, hw8));
            Some(cfg)
        }
    };

    let mut totals: BTreeMap<&str, LayerCost> = BTreeMap::new();
    for l in &b.layers {
        *totals.entry(l.stage.as_str()).or_default() += l.cost;
    }
    let mut total = LayerCost::default();
    for (name, os, d, ch, hw) in &stage_meta {
        let cost = totals.get(name.as_str()).copied().unwrap_or_default();
        total += cost;
        stages.push(StageCost {
            name: name.clone(),
            output_stride: *os,
            dilation: *d,
            output_elems: (ch * hw.0 * hw.1) as u64,
            cost,
        });
    }
    Ok(CostReport {
        backbone: spec.name.clone(),
        mode,
        input_hw,
        jpu: jpu_config,
        layers: b.layers,
        stages,
        total,
    })
}

/// `a / b`, with the exact integer operands kept alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratio {
    pub a: u64,
    pub b: u64,
    /// `None` when `b` is zero.
    pub ratio: Option<f64>,
}

impl Ratio {
    pub fn new(a: u64, b: u64) -> Ratio {
        Ratio {
            a,
            b,
            ratio: (b != 0).then(|| a as f64 / b as f64),
        }
    }

    /// True iff `a == k * b` exactly.
    pub fn is_exactly(&self, k: u64) -> bool {
        self.b != 0 && self.a == k * self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowRatio {
    pub name: String,
    pub macs: Ratio,
    pub activation_elems: Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioTable {
    pub a: String,
    pub b: String,
    pub stages: Vec<RowRatio>,
    pub layers: Option<Vec<RowRatio>>,
    pub total_macs: Ratio,
    pub total_params: Ratio,
    pub total_activation_elems: Ratio,
}

fn row(name: &str, a: Option<&LayerCost>, b: Option<&LayerCost>) -> RowRatio {
    let (a, b) = (a.copied().unwrap_or_default(), b.copied().unwrap_or_default());
    RowRatio {
        name: name.to_string(),
        macs: Ratio::new(a.macs, b.macs),
        activation_elems: Ratio::new(a.activation_elems, b.activation_elems),
    }
}

/// Stage-level ratios `a / b` over the union of stage names (a stage absent
/// on one side counts as zero). With `per_layer`, both reports must list the
/// same layer names in the same order.
pub fn compare_costs(a: &CostReport, b: &CostReport, per_layer: bool) -> Result<RatioTable> {
    let mut names: Vec<&str> = a.stages.iter().map(|s| s.name.as_str()).collect();
    for s in &b.stages {
        if !names.contains(&s.name.as_str()) {
            names.push(&s.name);
        }
    }
    let stages = names
        .iter()
        .map(|n| row(n, a.stage(n).map(|s| &s.cost), b.stage(n).map(|s| &s.cost)))
        .collect();
    let layers = if per_layer {
        if a.layers.len() != b.layers.len() || a.layers.iter().zip(&b.layers).any(|(x, y)| x.name != y.name) {
            return Err(Error::incompatible("compare_costs", "reports have different layer structure"));
        }
        Some(
            a.layers
                .iter()
                .zip(&b.layers)
                .map(|(x, y)| row(&x.name, Some(&x.cost), Some(&y.cost)))
                .collect(),
        )
    } else {
        None
    };
    Ok(RatioTable {
        a: format!("{}/{}", a.backbone, a.mode),
        b: format!("{}/{}", b.backbone, b.mode),
        stages,
        layers,
        total_macs: Ratio::new(a.total.macs, b.total.macs),
        total_params: Ratio::new(a.total.params, b.total.params),
        total_activation_elems: Ratio::new(a.total.activation_elems, b.total.activation_elems),
    })
}
