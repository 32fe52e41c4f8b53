use super::{mini_backbone_forward, mini_backbone_init, BackboneMode, MiniBackboneConfig};
use crate::tensor::{Rng, Tensor};
use crate::{Error, Result};

/// Student inputs (stride-wired features) and the dilated-wired target.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherBatch {
    pub conv3: Tensor<f64>,
    pub conv4: Tensor<f64>,
    pub conv5: Tensor<f64>,
    /// Dilated conv5, at conv3's resolution.
    pub target: Tensor<f64>,
}

impl TeacherBatch {
    fn slice(&self, r: std::ops::Range<usize>) -> Result<TeacherBatch> {
        Ok(TeacherBatch {
            conv3: self.conv3.slice_batch(r.clone())?,
            conv4: self.conv4.slice_batch(r.clone())?,
            conv5: self.conv5.slice_batch(r.clone())?,
            target: self.target.slice_batch(r)?,
        })
    }

    pub fn len(&self) -> usize {
        self.target.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherDataset {
    pub train: TeacherBatch,
    /// Held out: the last quarter of the samples (at least one).
    pub test: TeacherBatch,
    /// Factors applied to conv3, conv4 and conv5 (and the target, with
    /// conv5's factor) so each level has unit RMS over the training split.
    pub scales: [f64; 3],
}

/// Fixed random teacher backbone (weights from `seed`, which replaces
/// `config.seed`) run on uniform `[-1, 1)` images in both wirings.
///
/// Each feature level is rescaled to unit RMS over the training split; the
/// target shares conv5's factor, so subsampling it by 4 still gives conv5.
pub fn synthetic_teacher(
    seed: u64,
    n_samples: usize,
    config: &MiniBackboneConfig,
    input_hw: (usize, usize),
) -> Result<TeacherDataset> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig(format!(
            "the teacher needs at least 2 samples to hold one out, got {n_samples}"
        )));
    }
    let config = MiniBackboneConfig { seed, ..config.clone() };
    let params = mini_backbone_init::<f64>(&config)?;
    let mut rng = Rng::new(seed).fork(1);
    let x = Tensor::random_uniform([n_samples, config.in_channels, input_hw.0, input_hw.1], &mut rng, -1.0, 1.0)?;
    let student = mini_backbone_forward(&x, &params, &config, BackboneMode::StrideOs32)?;
    let teacher = mini_backbone_forward(&x, &params, &config, BackboneMode::DilatedOs8)?;
    let n_test = (n_samples / 4).max(1);
    let n_train = n_samples - n_test;
    let scale = |t: &Tensor<f64>| -> Result<f64> {
        let train = t.slice_batch(0..n_train)?;
        let rms = (train.sum_sq() / train.len() as f64).sqrt();
        Ok(if rms > 0.0 { 1.0 / rms } else { 1.0 })
    };
    let scales = [scale(&student.conv3)?, scale(&student.conv4)?, scale(&student.conv5)?];
    let all = TeacherBatch {
        conv3: student.conv3.scale(scales[0]),
        conv4: student.conv4.scale(scales[1]),
        conv5: student.conv5.scale(scales[2]),
        target: teacher.conv5.scale(scales[2]),
    };
    Ok(TeacherDataset {
        train: all.slice(0..n_train)?,
        test: all.slice(n_train..n_samples)?,
        scales,
    })
}
