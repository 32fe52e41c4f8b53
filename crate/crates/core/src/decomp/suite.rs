//! Randomized equivalence suite driving the three stage identities.

use serde::Serialize;

use super::{
    check_phase_consistency, dilated_stage, dilated_stage_decomposed, stride_stage,
    stride_stage_via_reduce, StageWeights,
};
use crate::conv::{ConvSpec, ConvWeights};
use crate::tensor::{max_abs_diff, DType, Element, Rng, Tensor};
use crate::Result;

/// One random stage instance.
#[derive(Debug, Clone)]
pub struct StageCase<T> {
    pub x: Tensor<T>,
    pub weights: StageWeights<T>,
}

fn random_conv<T: Element>(cin: usize, cout: usize, rng: &mut Rng) -> Result<ConvWeights<T>> {
    let spec = ConvSpec::new(cin, cout, 3);
    let mut w = ConvWeights::init_uniform(&spec, 3f64.sqrt(), true, rng)?;
    w.bias = Some((0..cout).map(|_| T::from_f64(rng.next_f64() - 0.5)).collect());
    Ok(w)
}

/// Body depth in `1..=3`, batch in `1..=2`, channels in `1..=8`, spatial dims
/// even in `2..=16`.
pub fn random_stage_case<T: Element>(rng: &mut Rng) -> Result<StageCase<T>> {
    let depth = rng.range(1, 3);
    let batch = rng.range(1, 2);
    let cin = rng.range(1, 8);
    let (h, w) = (2 * rng.range(1, 8), 2 * rng.range(1, 8));
    let x = Tensor::random_uniform([batch, cin, h, w], rng, -1.0, 1.0)?;
    let mut c = rng.range(1, 8);
    let head = random_conv(cin, c, rng)?;
    let mut body = Vec::with_capacity(depth);
    for _ in 0..depth {
        let next = rng.range(1, 8);
        body.push(random_conv(c, next, rng)?);
        c = next;
    }
    Ok(StageCase {
        x,
        weights: StageWeights { head, body },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyReport {
    pub cases: usize,
    pub max_abs_diff: f64,
    /// Index of the case with the largest difference.
    pub worst_case: usize,
    pub pass: bool,
}

impl FamilyReport {
    fn new() -> Self {
        FamilyReport {
            cases: 0,
            max_abs_diff: 0.0,
            worst_case: 0,
            pass: true,
        }
    }

    fn record(&mut self, diff: f64, tol: f64) {
        if diff > self.max_abs_diff || diff.is_nan() {
            self.max_abs_diff = diff;
            self.worst_case = self.cases;
        }
        self.pass &= diff <= tol;
        self.cases += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Families {
    pub dilated_decomp: FamilyReport,
    pub stride_reduce: FamilyReport,
    pub phase_consistency: FamilyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivReport {
    pub dtype: DType,
    pub seed: u64,
    pub tolerance: f64,
    pub families: Families,
    pub pass: bool,
}

/// Run `cases` random instances through each identity. Each family gets its
/// own seeded stream so changing one never perturbs another.
pub fn run_equivalence_suite<T: Element>(cases: usize, seed: u64, tol: f64) -> Result<EquivReport> {
    let root = Rng::new(seed);
    let mut dilated = FamilyReport::new();
    let mut rng = root.fork(1);
    for _ in 0..cases {
        let case = random_stage_case::<T>(&mut rng)?;
        let direct = dilated_stage(&case.x, &case.weights)?.y_d;
        let split = dilated_stage_decomposed(&case.x, &case.weights)?;
        dilated.record(max_abs_diff(&direct, &split)?, tol);
    }

    let mut stride = FamilyReport::new();
    let mut rng = root.fork(2);
    for _ in 0..cases {
        let case = random_stage_case::<T>(&mut rng)?;
        let direct = stride_stage(&case.x, &case.weights)?;
        let reduced = stride_stage_via_reduce(&case.x, &case.weights)?;
        stride.record(max_abs_diff(&direct, &reduced)?, tol);
    }

    let mut phase = FamilyReport::new();
    let mut rng = root.fork(3);
    for _ in 0..cases {
        let case = random_stage_case::<T>(&mut rng)?;
        phase.record(check_phase_consistency(&case.x, &case.weights, tol).max_abs_diff, tol);
    }

    let pass = dilated.pass && stride.pass && phase.pass;
    Ok(EquivReport {
        dtype: T::DTYPE,
        seed,
        tolerance: tol,
        families: Families {
            dilated_decomp: dilated,
            stride_reduce: stride,
            phase_consistency: phase,
        },
        pass,
    })
}
