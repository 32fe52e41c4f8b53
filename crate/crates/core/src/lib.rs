//! Numeric building blocks for replacing dilated backbone stages with
//! stride convolutions plus Joint Pyramid Upsampling (JPU).
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] - dense NCHW tensors, bilinear resizing, channel concat, the
//!   `.jt` file format, and a deterministic RNG.
//! * [`conv`] - direct 2-D convolution (regular, strided, dilated, grouped,
//!   separable) with exact backward passes.
//! * [`decomp`] - parity split/merge/reduce and the dilated/stride stage
//!   composers together with their equivalence checkers.
//! * [`jointup`] - closed-form joint upsampling over per-pixel affine maps.
//! * [`jpu`] - the JPU module: forward, backward, init, serialization.
//! * [`cost`] - analytic MAC/parameter/activation model of ResNet backbones.
//! * [`experiments`] - mini backbone, synthetic teacher study, benchmark.

pub mod conv;
pub mod cost;
pub mod decomp;
pub mod defaults;
pub mod experiments;
pub mod gradcheck;
pub mod jointup;
pub mod jpu;
pub mod tensor;

mod error;

pub use error::{Error, Result};
pub use tensor::{DType, Element, IntoShape, Rng, Shape, Tensor};
