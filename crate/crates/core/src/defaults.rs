//! Default values shared by the library, the CLI and the acceptance tests.
//!
//! | name | value | used by |
//! |------|-------|---------|
//! | `EQUIV_CASES` | 200 | random cases per equivalence family |
//! | `EQUIV_SEED` | 0 | equivalence suite seed |
//! | `EQUIV_TOL_F64` / `EQUIV_TOL_F32` | 1e-12 / 1e-5 | equivalence max-abs tolerance |
//! | `GRADCHECK_EPS` | 1e-5 | central-difference step |
//! | `GRADCHECK_TOL` | 1e-5 | max relative error |
//! | `JOINTUP_TOL` | 1e-8 | plant-and-recover error |
//! | `COST_INPUT` | 512 x 512 | cost model input |
//! | `COST_JPU_WIDTH` | 512 | JPU width in the cost model |
//! | `EXPERIMENT_WIDTH` | 8 | JPU width of the trained student |
//! | `MINI_STEM_CHANNELS` | 8 | mini backbone stem width |
//! | `MINI_STAGE_CHANNELS` | 8, 16, 32, 48, 64 | mini backbone stage widths |
//! | `MINI_STAGE_BLOCKS` | 1, 1, 1, 3, 2 | 3x3 convs after each stage head |
//! | `TRAIN_INPUT` | 64 x 64 | teacher/student images |
//! | `TRAIN_SAMPLES` | 16 | images per dataset, last quarter held out |
//! | `TRAIN_STEPS` | 200 | SGD steps |
//! | `TRAIN_LR` | 0.2 | SGD learning rate (largest stable rate for the bilinear student) |
//! | `TRAIN_SEEDS` | 3 | seeds averaged by the training study |
//! | `BENCH_INPUT` | 256 x 256 | benchmark input |
//! | `BENCH_REPEATS` | 100 | timed runs |
//! | `BENCH_WARMUP` | 3 | untimed warm-up runs |

use crate::tensor::Element;

pub const EQUIV_CASES: usize = 200;
pub const EQUIV_SEED: u64 = 0;
pub const EQUIV_TOL_F64: f64 = <f64 as Element>::EQUIV_TOL;
pub const EQUIV_TOL_F32: f64 = <f32 as Element>::EQUIV_TOL;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-5;

pub const JOINTUP_TOL: f64 = 1e-8;

pub const COST_INPUT: (usize, usize) = (512, 512);
pub const COST_JPU_WIDTH: usize = 512;

pub const EXPERIMENT_WIDTH: usize = 8;
pub const MINI_STEM_CHANNELS: usize = 8;
pub const MINI_STAGE_CHANNELS: [usize; 5] = [8, 16, 32, 48, 64];
pub const MINI_STAGE_BLOCKS: [usize; 5] = [1, 1, 1, 3, 2];
pub const TRAIN_INPUT: (usize, usize) = (64, 64);
pub const TRAIN_SAMPLES: usize = 16;
pub const TRAIN_STEPS: usize = 200;
pub const TRAIN_LR: f64 = 0.2;
pub const TRAIN_SEEDS: usize = 3;

pub const BENCH_INPUT: (usize, usize) = (256, 256);
pub const BENCH_REPEATS: usize = 100;
pub const BENCH_WARMUP: usize = 3;
pub const BENCH_MIN_REPEATS: usize = 10;
