use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{TeacherBatch, TeacherDataset};
use crate::conv::{conv2d, conv2d_backward, ConvSpec, ConvWeights};
use crate::jpu::{jpu_backward, jpu_forward, jpu_init, JpuCache, JpuConfig, JpuParams};
use crate::tensor::{bilinear_resize, Rng, Tensor};
use crate::{defaults, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Bilinear upsampling of conv5, then the head.
    Bilinear,
    /// JPU over conv3..conv5, then the head.
    Jpu,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Bilinear => "bilinear",
            Method::Jpu => "jpu",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Method::Bilinear),
            "jpu" => Ok(Method::Jpu),
            _ => Err(Error::InvalidConfig(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Student {
    Bilinear {
        head: ConvWeights<f64>,
    },
    Jpu {
        config: JpuConfig,
        jpu: JpuParams<f64>,
        head: ConvWeights<f64>,
    },
}

struct Tape {
    head_in: Tensor<f64>,
    jpu: Option<JpuCache<f64>>,
}

fn head_spec(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::new(cin, cout, 3).padding(1)
}

impl Student {
    /// The 3x3 head maps to conv5's channel count in both variants.
    pub fn init(method: Method, channels: [usize; 3], width: usize, rng: &mut Rng) -> Result<Student> {
        let c5 = channels[2];
        Ok(match method {
            Method::Bilinear => Student::Bilinear {
                head: ConvWeights::init_uniform(&head_spec(c5, c5), 1.0, true, rng)?,
            },
            Method::Jpu => {
                let config = JpuConfig::new(channels, width);
                let jpu = jpu_init(&config, rng)?;
                let head = ConvWeights::init_uniform(&head_spec(config.out_channels, c5), 1.0, true, rng)?;
                Student::Jpu { config, jpu, head }
            }
        })
    }

    pub fn method(&self) -> Method {
        match self {
            Student::Bilinear { .. } => Method::Bilinear,
            Student::Jpu { .. } => Method::Jpu,
        }
    }

    pub fn head(&self) -> &ConvWeights<f64> {
        match self {
            Student::Bilinear { head } | Student::Jpu { head, .. } => head,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Student::Bilinear { head } => head.param_count(),
            Student::Jpu { jpu, head, .. } => jpu.param_count() + head.param_count(),
        }
    }

    fn head_spec(&self) -> ConvSpec {
        let s = self.head().weight.shape();
        head_spec(s.c, s.n)
    }

    fn forward(&self, b: &TeacherBatch) -> Result<(Tensor<f64>, Tape)> {
        let s3 = b.conv3.shape();
        let (head_in, jpu) = match self {
            Student::Bilinear { .. } => (bilinear_resize(&b.conv5, s3.h, s3.w)?, None),
            Student::Jpu { config, jpu, .. } => {
                let (y, cache) = jpu_forward(&b.conv3, &b.conv4, &b.conv5, jpu, config)?;
                (y, Some(cache))
            }
        };
        let pred = conv2d(&head_in, self.head(), &self.head_spec())?;
        Ok((pred, Tape { head_in, jpu }))
    }

    pub fn predict(&self, b: &TeacherBatch) -> Result<Tensor<f64>> {
        Ok(self.forward(b)?.0)
    }

    pub fn mse(&self, b: &TeacherBatch) -> Result<f64> {
        let pred = self.predict(b)?;
        Ok(pred.sub(&b.target)?.sum_sq() / pred.len() as f64)
    }

    /// One plain SGD step on the batch MSE; returns the loss before the step.
    fn sgd_step(&mut self, b: &TeacherBatch, lr: f64) -> Result<f64> {
        let (pred, tape) = self.forward(b)?;
        let diff = pred.sub(&b.target)?;
        let n = diff.len() as f64;
        let loss = diff.sum_sq() / n;
        let grad = diff.scale(2.0 / n);
        let spec = self.head_spec();
        let hg = conv2d_backward(&tape.head_in, self.head(), &spec, &grad)?;
        let step = |w: f64, g: f64| w - lr * g;
        match self {
            Student::Bilinear { head } => *head = head.zip_map(&hg.grad_w, step)?,
            Student::Jpu { config, jpu, head } => {
                let cache = tape.jpu.as_ref().expect("jpu student records a cache");
                let jg = jpu_backward(cache, jpu, config, &hg.grad_x)?;
                *jpu = jpu.zip_map(&jg.params, step)?;
                *head = head.zip_map(&hg.grad_w, step)?;
            }
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// JPU width; its output width is four times this.
    pub width: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: defaults::TRAIN_STEPS,
            lr: defaults::TRAIN_LR,
            seed: 0,
            width: defaults::EXPERIMENT_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRun {
    pub method: Method,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Training-batch MSE before each step.
    pub loss_curve: Vec<f64>,
    /// Held-out MSE before training.
    pub initial_mse: f64,
    /// Held-out MSE after training.
    pub final_mse: f64,
    pub param_count: usize,
    pub head_param_count: usize,
}

/// Full-batch SGD on the training split; returns the run record and the
/// trained student.
pub fn train_student(method: Method, dataset: &TeacherDataset, opts: &TrainOptions) -> Result<(TrainRun, Student)> {
    if !opts.lr.is_finite() || opts.lr < 0.0 {
        return Err(Error::InvalidConfig(format!("learning rate must be finite and >= 0, got {}", opts.lr)));
    }
    let channels = [
        dataset.train.conv3.shape().c,
        dataset.train.conv4.shape().c,
        dataset.train.conv5.shape().c,
    ];
    let mut rng = Rng::new(opts.seed).fork(method as u64 + 16);
    let mut student = Student::init(method, channels, opts.width, &mut rng)?;
    let initial_mse = student.mse(&dataset.test)?;
    let mut loss_curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let loss = student.sgd_step(&dataset.train, opts.lr)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step, value: loss });
        }
        loss_curve.push(loss);
    }
    let final_mse = student.mse(&dataset.test)?;
    if !final_mse.is_finite() {
        return Err(Error::NonFinite {
            step: opts.steps,
            value: final_mse,
        });
    }
    let run = TrainRun {
        method,
        steps: opts.steps,
        lr: opts.lr,
        seed: opts.seed,
        loss_curve,
        initial_mse,
        final_mse,
        param_count: student.param_count(),
        head_param_count: student.head().param_count(),
    };
    Ok((run, student))
}

pub fn train_approximator(method: Method, dataset: &TeacherDataset, steps: usize, lr: f64, seed: u64) -> Result<TrainRun> {
    let opts = TrainOptions {
        steps,
        lr,
        seed,
        ..TrainOptions::default()
    };
    Ok(train_student(method, dataset, &opts)?.0)
}
