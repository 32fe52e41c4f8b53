//! Parity split/merge/reduce and the two ways of computing a backbone stage.
//!
//! A dilated stage runs a regular 3x3 head and then `n` 3x3 convs with
//! dilation 2. A stride stage runs a stride-2 head and then `n` regular 3x3
//! convs. Under zero padding three identities hold exactly:
//!
//! * a dilation-2 conv equals split into parity phases, a regular conv on
//!   each phase, and merge ([`dilated_stage_decomposed`]);
//! * a stride-2 conv equals a regular conv followed by [`reduce_even`];
//! * therefore the stride stage output is the even-even phase of the dilated
//!   stage output when both share weights ([`check_phase_consistency`]).

mod suite;

use serde::Serialize;

use crate::conv::{conv2d, ConvSpec, ConvWeights};
use crate::tensor::{max_abs_diff, Element, Tensor};
use crate::{Error, Result};

pub use suite::{random_stage_case, run_equivalence_suite, EquivReport, FamilyReport, Families, StageCase};

/// The four parity phases of a tensor with even spatial dims.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSet<T> {
    /// Even rows, even columns.
    pub ee: Tensor<T>,
    /// Even rows, odd columns.
    pub eo: Tensor<T>,
    /// Odd rows, even columns.
    pub oe: Tensor<T>,
    /// Odd rows, odd columns.
    pub oo: Tensor<T>,
    pub h: usize,
    pub w: usize,
}

impl<T: Element> PhaseSet<T> {
    /// Phases in `(row parity, column parity)` order `ee, eo, oe, oo`.
    pub fn phases(&self) -> [&Tensor<T>; 4] {
        [&self.ee, &self.eo, &self.oe, &self.oo]
    }

    pub fn map(&self, mut f: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>) -> Result<PhaseSet<T>> {
        let ee = f(&self.ee)?;
        let eo = f(&self.eo)?;
        let oe = f(&self.oe)?;
        let oo = f(&self.oo)?;
        Ok(PhaseSet {
            h: 2 * ee.shape().h,
            w: 2 * ee.shape().w,
            ee,
            eo,
            oe,
            oo,
        })
    }
}

fn require_even<T: Element>(op: &'static str, x: &Tensor<T>) -> Result<()> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::OddSpatial { op, h: s.h, w: s.w });
    }
    Ok(())
}

/// Phase `(a, b)` holds `x[.., 2i + a, 2j + b]`.
pub fn split_parity<T: Element>(x: &Tensor<T>) -> Result<PhaseSet<T>> {
    require_even("split_parity", x)?;
    let s = x.shape();
    Ok(PhaseSet {
        ee: x.subsample(0, 0, 2)?,
        eo: x.subsample(0, 1, 2)?,
        oe: x.subsample(1, 0, 2)?,
        oo: x.subsample(1, 1, 2)?,
        h: s.h,
        w: s.w,
    })
}

/// Interleave four phases back into one tensor; exact inverse of
/// [`split_parity`].
pub fn merge_parity<T: Element>(p: &PhaseSet<T>) -> Result<Tensor<T>> {
    let ps = p.ee.shape();
    for t in p.phases() {
        t.expect_shape(ps)?;
    }
    if (p.h, p.w) != (2 * ps.h, 2 * ps.w) {
        return Err(Error::incompatible(
            "merge_parity",
            format!("phases {ps} do not tile {}x{}", p.h, p.w),
        ));
    }
    let out_shape = ps.with_spatial(p.h, p.w);
    let mut out = vec![T::ZERO; out_shape.numel()];
    for (k, phase) in p.phases().into_iter().enumerate() {
        let (a, b) = (k / 2, k % 2);
        for n in 0..ps.n {
            for c in 0..ps.c {
                let src = phase.plane(n, c);
                for i in 0..ps.h {
                    let base = out_shape.offset(n, c, 2 * i + a, 0);
                    for j in 0..ps.w {
                        out[base + 2 * j + b] = src[i * ps.w + j];
                    }
                }
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Keep only elements with even row and column index.
pub fn reduce_even<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    require_even("reduce_even", x)?;
    x.subsample(0, 0, 2)
}

/// Shared weights for a stage: a 3x3 head followed by a chain of 3x3 convs.
#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights<T> {
    pub head: ConvWeights<T>,
    pub body: Vec<ConvWeights<T>>,
}

/// Spec for a square odd kernel in `w` at the given stride and dilation,
/// padded so a stride-1 conv preserves size.
pub fn conv_spec_for<T: Element>(w: &ConvWeights<T>, stride: usize, dilation: usize) -> Result<ConvSpec> {
    let ws = w.weight.shape();
    if ws.h != ws.w || ws.h.is_multiple_of(2) {
        return Err(Error::InvalidConv(format!("stage kernels must be square and odd, got {ws}")));
    }
    Ok(ConvSpec::new(ws.c, ws.n, ws.h)
        .stride(stride)
        .dilation(dilation)
        .padding(dilation * (ws.h - 1) / 2))
}

impl<T: Element> StageWeights<T> {
    pub fn in_channels(&self) -> usize {
        self.head.weight.shape().c
    }

    pub fn out_channels(&self) -> usize {
        self.body.last().unwrap_or(&self.head).weight.shape().n
    }

    pub fn param_count(&self) -> usize {
        self.head.param_count() + self.body.iter().map(ConvWeights::param_count).sum::<usize>()
    }

    /// Apply the body chain with the given dilation.
    pub fn run_body(&self, x: &Tensor<T>, dilation: usize) -> Result<Tensor<T>> {
        self.body.iter().try_fold(x.clone(), |acc, w| {
            conv2d(&acc, w, &conv_spec_for(w, 1, dilation)?)
        })
    }

    pub fn head_regular(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.head, &conv_spec_for(&self.head, 1, 1)?)
    }

    pub fn head_strided(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.head, &conv_spec_for(&self.head, 2, 1)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DilatedStage<T> {
    /// Head output `C_r(x)`.
    pub y_m: Tensor<T>,
    /// Stage output.
    pub y_d: Tensor<T>,
}

/// Regular head, then the body with dilation 2 and padding 2.
pub fn dilated_stage<T: Element>(x: &Tensor<T>, sw: &StageWeights<T>) -> Result<DilatedStage<T>> {
    let y_m = sw.head_regular(x)?;
    let y_d = sw.run_body(&y_m, 2)?;
    Ok(DilatedStage { y_m, y_d })
}

/// Same result as [`dilated_stage`], computed by splitting the head output
/// into parity phases, running the body as regular convs on each phase, and
/// merging.
pub fn dilated_stage_decomposed<T: Element>(x: &Tensor<T>, sw: &StageWeights<T>) -> Result<Tensor<T>> {
    let y_m = sw.head_regular(x)?;
    let phases = split_parity(&y_m)?;
    merge_parity(&phases.map(|p| sw.run_body(p, 1))?)
}

/// Stride-2 head, then the body as regular convs.
pub fn stride_stage<T: Element>(x: &Tensor<T>, sw: &StageWeights<T>) -> Result<Tensor<T>> {
    sw.run_body(&sw.head_strided(x)?, 1)
}

/// [`stride_stage`] rewritten as regular head, [`reduce_even`], body.
pub fn stride_stage_via_reduce<T: Element>(x: &Tensor<T>, sw: &StageWeights<T>) -> Result<Tensor<T>> {
    sw.run_body(&reduce_even(&sw.head_regular(x)?)?, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseReport {
    pub max_abs_diff: f64,
    pub pass: bool,
}

/// Compare `reduce_even(dilated_stage(x).y_d)` with `stride_stage(x)` on
/// shared weights. Failures (including shape errors) are reported, not
/// raised.
pub fn check_phase_consistency<T: Element>(x: &Tensor<T>, sw: &StageWeights<T>, tol: f64) -> PhaseReport {
    let diff = (|| -> Result<f64> {
        let y_d = dilated_stage(x, sw)?.y_d;
        let y_s = stride_stage(x, sw)?;
        max_abs_diff(&reduce_even(&y_d)?, &y_s)
    })();
    match diff {
        Ok(d) => PhaseReport {
            max_abs_diff: d,
            pass: d <= tol,
        },
        Err(_) => PhaseReport {
            max_abs_diff: f64::INFINITY,
            pass: false,
        },
    }
}
