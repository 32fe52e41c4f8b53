use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{forward_timed, mini_backbone_init, BackboneMode, MiniBackboneConfig, STAGE_NAMES};
use crate::jpu::{jpu_forward, jpu_init, JpuConfig};
use crate::tensor::{Rng, Tensor};
use crate::{defaults, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    /// Backbone only, dilated wiring.
    DilatedOs8,
    /// Stride-wired backbone followed by a JPU.
    StrideOs32PlusJpu,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub input_hw: (usize, usize),
    pub warmup: usize,
    pub repeats: usize,
    pub jpu_width: Option<usize>,
    pub timings_ms: Vec<f64>,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Mean time per stage over the timed runs.
    pub per_stage_ms: BTreeMap<String, f64>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Wall-clock timing of one batch-1 forward pass in `f32`. `warmup` untimed
/// runs precede `repeats` timed ones; runs are strictly serial.
pub fn bench_forward(
    config: &MiniBackboneConfig,
    mode: BenchMode,
    input_hw: (usize, usize),
    repeats: usize,
    warmup: usize,
) -> Result<BenchReport> {
    if repeats < defaults::BENCH_MIN_REPEATS || warmup < defaults::BENCH_WARMUP {
        return Err(Error::InvalidConfig(format!(
            "bench needs at least {} repeats and {} warm-up runs, got {repeats} and {warmup}",
            defaults::BENCH_MIN_REPEATS,
            defaults::BENCH_WARMUP
        )));
    }
    let params = mini_backbone_init::<f32>(config)?;
    let mut rng = Rng::new(config.seed).fork(2);
    let x = Tensor::<f32>::random_uniform([1, config.in_channels, input_hw.0, input_hw.1], &mut rng, -1.0, 1.0)?;
    let jpu = match mode {
        BenchMode::DilatedOs8 => None,
        BenchMode::StrideOs32PlusJpu => {
            let cfg = JpuConfig::new(config.feature_channels(), defaults::EXPERIMENT_WIDTH);
            let p = jpu_init::<f32>(&cfg, &mut rng)?;
            Some((cfg, p))
        }
    };
    let backbone_mode = match mode {
        BenchMode::DilatedOs8 => BackboneMode::DilatedOs8,
        BenchMode::StrideOs32PlusJpu => BackboneMode::StrideOs32,
    };

    let mut stage_totals = vec![Duration::ZERO; STAGE_NAMES.len() + 1];
    let mut timings_ms = Vec::with_capacity(repeats);
    for run in 0..warmup + repeats {
        let timed = run >= warmup;
        let start = Instant::now();
        let feats = forward_timed(&x, &params, config, backbone_mode, |k, d| {
            if timed {
                stage_totals[k] += d;
            }
        })?;
        if let Some((cfg, p)) = &jpu {
            let t = Instant::now();
            let (y, _) = jpu_forward(&feats.conv3, &feats.conv4, &feats.conv5, p, cfg)?;
            std::hint::black_box(&y);
            if timed {
                stage_totals[STAGE_NAMES.len()] += t.elapsed();
            }
        }
        std::hint::black_box(&feats);
        if timed {
            timings_ms.push(ms(start.elapsed()));
        }
    }

    let n = repeats as f64;
    let mean_ms = timings_ms.iter().sum::<f64>() / n;
    let var = timings_ms.iter().map(|t| (t - mean_ms).powi(2)).sum::<f64>() / (n - 1.0);
    let mut per_stage_ms: BTreeMap<String, f64> = STAGE_NAMES
        .iter()
        .zip(&stage_totals)
        .map(|(name, d)| (name.to_string(), ms(*d) / n))
        .collect();
    if jpu.is_some() {
        per_stage_ms.insert("jpu".into(), ms(stage_totals[STAGE_NAMES.len()]) / n);
    }
    Ok(BenchReport {
        mode,
        input_hw,
        warmup,
        repeats,
        jpu_width: jpu.as_ref().map(|(c, _)| c.width),
        min_ms: timings_ms.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: timings_ms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        timings_ms,
        mean_ms,
        std_ms: var.sqrt(),
        per_stage_ms,
    })
}
