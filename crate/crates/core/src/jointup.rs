//! Joint upsampling with a per-pixel affine hypothesis class.
//!
//! Given low-resolution guidance `x_l`, a low-resolution target `y_l`, and
//! high-resolution guidance `x_h`, find the affine channel map `(W, b)`
//! minimizing `sum_pixels ||y_l - (W x_l + b)||^2` and apply it to `x_h`.
//! The fit solves the damped normal equations
//! `(Z^T Z + lambda I) theta = Z^T Y` with `Z = [x_l | 1]` by Cholesky.
//!
//! [`approximate_y_d`] wires this into the stage picture: the head output
//! `y_m` is split into parity phases, the map is fit from the even-even phase
//! to the stride-stage output `y_s`, then applied to all four phases.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::conv::{conv2d, ConvWeights};
use crate::decomp::{conv_spec_for, merge_parity, split_parity};
use crate::tensor::{max_abs_diff, Element, Rng, Tensor};
use crate::{Error, Result};

/// Tikhonov damping added to the diagonal of the Gram matrix.
pub const GRAM_DAMPING: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct JointUpsampleProblem<T> {
    pub x_l: Tensor<T>,
    pub y_l: Tensor<T>,
    pub x_h: Tensor<T>,
}

/// `y = W x + b` per pixel, `W` stored row-major as
/// `target_channels x guidance_channels`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearMap {
    pub target_channels: usize,
    pub guidance_channels: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearMap {
    pub fn new(target_channels: usize, guidance_channels: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != target_channels * guidance_channels || bias.len() != target_channels {
            return Err(Error::incompatible("LinearMap", "weight/bias sizes do not match channel counts"));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::IllPosed("non-finite map coefficients".into()));
        }
        Ok(LinearMap {
            target_channels,
            guidance_channels,
            weight,
            bias,
        })
    }

    pub fn w(&self, t: usize, g: usize) -> f64 {
        self.weight[t * self.guidance_channels + g]
    }

    /// Apply per pixel; arithmetic is carried out in `f64`.
    pub fn apply<T: Element>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.c != self.guidance_channels {
            return Err(Error::incompatible(
                "LinearMap::apply",
                format!("input has {} channels, map expects {}", s.c, self.guidance_channels),
            ));
        }
        let out_shape = s.with_channels(self.target_channels);
        let p = s.plane();
        let mut out = vec![T::ZERO; out_shape.numel()];
        let mut pixel = vec![0.0; s.c];
        for n in 0..s.n {
            for k in 0..p {
                for (g, v) in pixel.iter_mut().enumerate() {
                    *v = x.plane(n, g)[k].to_f64();
                }
                for t in 0..self.target_channels {
                    let row = &self.weight[t * s.c..(t + 1) * s.c];
                    let v = self.bias[t] + row.iter().zip(&pixel).map(|(a, b)| a * b).sum::<f64>();
                    out[out_shape.offset(n, t, 0, 0) + k] = T::from_f64(v);
                }
            }
        }
        Ok(Tensor::from_parts(out_shape, out))
    }

    /// `sum_pixels ||y - (W x + b)||^2`.
    pub fn objective<T: Element>(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
        let pred = self.apply(x)?;
        y.expect_shape(pred.shape())?;
        Ok(pred
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a.to_f64() - b.to_f64()).powi(2))
            .sum())
    }
}

#[derive(Debug, Clone)]
pub struct JointUpsampleSolution<T> {
    pub map: LinearMap,
    pub y_h: Tensor<T>,
    /// Root-mean-square of the fitted residual over every target element.
    pub residual: f64,
}

/// Root-mean-square difference between two same-shape tensors.
pub fn rms_diff<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_shape(b.shape())?;
    let ss: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.to_f64() - y.to_f64()).powi(2))
        .sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Least-squares affine fit from `x` to `y` over every pixel of every batch
/// item.
pub fn fit_linear_map<T: Element>(x: &Tensor<T>, y: &Tensor<T>) -> Result<LinearMap> {
    let (xs, ys) = (x.shape(), y.shape());
    if (xs.n, xs.h, xs.w) != (ys.n, ys.h, ys.w) {
        return Err(Error::incompatible(
            "fit_linear_map",
            format!("guidance {xs} and target {ys} differ outside channels"),
        ));
    }
    let (gc, tc) = (xs.c, ys.c);
    let pixels = xs.n * xs.plane();
    if pixels < gc + 1 {
        return Err(Error::IllPosed(format!(
            "{pixels} pixels cannot determine an affine map with {gc} guidance channels"
        )));
    }
    let dim = gc + 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DMatrix::<f64>::zeros(dim, tc);
    let mut z = DVector::<f64>::zeros(dim);
    let mut t = DVector::<f64>::zeros(tc);
    z[gc] = 1.0;
    for n in 0..xs.n {
        for k in 0..xs.plane() {
            for g in 0..gc {
                z[g] = x.plane(n, g)[k].to_f64();
            }
            for c in 0..tc {
                t[c] = y.plane(n, c)[k].to_f64();
            }
            gram.ger(1.0, &z, &z, 1.0);
            rhs.ger(1.0, &z, &t, 1.0);
        }
    }
    for i in 0..dim {
        gram[(i, i)] += GRAM_DAMPING;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::IllPosed("damped Gram matrix is not positive definite".into()))?;
    let theta = chol.solve(&rhs);
    let mut weight = Vec::with_capacity(tc * gc);
    for c in 0..tc {
        weight.extend((0..gc).map(|g| theta[(g, c)]));
    }
    let bias = (0..tc).map(|c| theta[(gc, c)]).collect();
    LinearMap::new(tc, gc, weight, bias)
}

pub fn solve_joint_upsample<T: Element>(p: &JointUpsampleProblem<T>) -> Result<JointUpsampleSolution<T>> {
    let (xl, xh) = (p.x_l.shape(), p.x_h.shape());
    if (xl.n, xl.c) != (xh.n, xh.c) {
        return Err(Error::incompatible(
            "solve_joint_upsample",
            format!("low-res guidance {xl} and high-res guidance {xh} differ in batch or channels"),
        ));
    }
    let map = fit_linear_map(&p.x_l, &p.y_l)?;
    let residual = rms_diff(&map.apply(&p.x_l)?, &p.y_l)?;
    let y_h = map.apply(&p.x_h)?;
    Ok(JointUpsampleSolution { map, y_h, residual })
}

#[derive(Debug, Clone)]
pub struct ApproxYd<T> {
    pub y: Tensor<T>,
    pub map: LinearMap,
    pub residual: f64,
}

/// Full-resolution approximation of the dilated stage output from the
/// head kernel and the stride stage output.
pub fn approximate_y_d<T: Element>(x: &Tensor<T>, y_s: &Tensor<T>, head: &ConvWeights<T>) -> Result<ApproxYd<T>> {
    let y_m = conv2d(x, head, &conv_spec_for(head, 1, 1)?)?;
    let phases = split_parity(&y_m)?;
    let (g, s) = (phases.ee.shape(), y_s.shape());
    if (g.n, g.h, g.w) != (s.n, s.h, s.w) {
        return Err(Error::incompatible(
            "approximate_y_d",
            format!("y_s {s} must match the even-even phase {g} spatially"),
        ));
    }
    let sol = solve_joint_upsample(&JointUpsampleProblem {
        x_l: phases.ee.clone(),
        y_l: y_s.clone(),
        x_h: y_m,
    })?;
    let mapped = phases.map(|p| sol.map.apply(p))?;
    Ok(ApproxYd {
        y: merge_parity(&mapped)?,
        map: sol.map,
        residual: sol.residual,
    })
}

/// Outcome of [`plant_and_recover`]. Every error is a max-abs difference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub seed: u64,
    pub guidance_channels: usize,
    pub target_channels: usize,
    pub low_hw: (usize, usize),
    pub high_hw: (usize, usize),
    /// Fit residual of the planted problem.
    pub residual: f64,
    /// Recovered `y_h` against `W* x_h + b*`.
    pub recovery_error: f64,
    /// Recovered `(W, b)` against `(W*, b*)`.
    pub parameter_error: f64,
    /// `y_l = x_l`: recovered `y_h` against `x_h`.
    pub identity_error: f64,
    /// `y_l = 2 x_l`: recovered `y_h` against `2 x_h`.
    pub scaling_error: f64,
}

/// Draws guidance, plants a random affine map `(W*, b*)`, generates `y_l`
/// exactly, and measures how well the solver recovers the high-resolution
/// target. Also runs the identity and doubling relations on the same
/// guidance.
pub fn plant_and_recover(seed: u64) -> Result<RecoveryReport> {
    let (gc, tc) = (4, 3);
    let (low_hw, high_hw) = ((8, 8), (16, 16));
    let mut rng = Rng::new(seed);
    let x_l = Tensor::<f64>::random_uniform([1, gc, low_hw.0, low_hw.1], &mut rng, -1.0, 1.0)?;
    let x_h = Tensor::<f64>::random_uniform([1, gc, high_hw.0, high_hw.1], &mut rng, -1.0, 1.0)?;
    let mut draw = |n: usize| (0..n).map(|_| 2.0 * rng.next_f64() - 1.0).collect::<Vec<_>>();
    let truth = LinearMap::new(tc, gc, draw(tc * gc), draw(tc))?;

    let solve = |y_l: Tensor<f64>| {
        solve_joint_upsample(&JointUpsampleProblem {
            x_l: x_l.clone(),
            y_l,
            x_h: x_h.clone(),
        })
    };
    let planted = solve(truth.apply(&x_l)?)?;
    let parameter_error = planted
        .map
        .weight
        .iter()
        .chain(&planted.map.bias)
        .zip(truth.weight.iter().chain(&truth.bias))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let identity = solve(x_l.clone())?;
    let doubled = solve(x_l.scale(2.0))?;
    Ok(RecoveryReport {
        seed,
        guidance_channels: gc,
        target_channels: tc,
        low_hw,
        high_hw,
        residual: planted.residual,
        recovery_error: max_abs_diff(&planted.y_h, &truth.apply(&x_h)?)?,
        parameter_error,
        identity_error: max_abs_diff(&identity.y_h, &x_h)?,
        scaling_error: max_abs_diff(&doubled.y_h, &x_h.scale(2.0))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::ConvSpec;
    use crate::decomp::{reduce_even, stride_stage, StageWeights};

    fn planted(rng: &mut Rng, gc: usize, tc: usize) -> LinearMap {
        let w = (0..gc * tc).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
        let b = (0..tc).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
        LinearMap::new(tc, gc, w, b).unwrap()
    }

    fn problem(rng: &mut Rng, y_of: impl Fn(&Tensor<f64>) -> Tensor<f64>) -> JointUpsampleProblem<f64> {
        let x_l = Tensor::random_uniform([1, 4, 8, 8], rng, -1.0, 1.0).unwrap();
        let x_h = Tensor::random_uniform([1, 4, 16, 16], rng, -1.0, 1.0).unwrap();
        JointUpsampleProblem { y_l: y_of(&x_l), x_l, x_h }
    }

    #[test]
    fn identity_relation() {
        let mut rng = Rng::new(1);
        let p = problem(&mut rng, |x| x.clone());
        let s = solve_joint_upsample(&p).unwrap();
        for t in 0..4 {
            for g in 0..4 {
                assert!((s.map.w(t, g) - if t == g { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
            assert!(s.map.bias[t].abs() < 1e-6);
        }
        assert!(max_abs_diff(&s.y_h, &p.x_h).unwrap() < 1e-6);
        assert!(s.residual <= 1e-6);
    }

    #[test]
    fn scaling_relation() {
        let mut rng = Rng::new(2);
        let p = problem(&mut rng, |x| x.scale(2.0));
        let s = solve_joint_upsample(&p).unwrap();
        assert!(max_abs_diff(&s.y_h, &p.x_h.scale(2.0)).unwrap() < 1e-6);
    }

    #[test]
    fn planted_map_is_recovered() {
        let mut rng = Rng::new(3);
        let truth = planted(&mut rng, 4, 3);
        let p = problem(&mut rng, |x| truth.apply(x).unwrap());
        let s = solve_joint_upsample(&p).unwrap();
        let expected = truth.apply(&p.x_h).unwrap();
        assert!(max_abs_diff(&s.y_h, &expected).unwrap() <= 1e-8);
    }

    #[test]
    fn demo_recovers_planted_map() {
        for seed in 0..5 {
            let r = plant_and_recover(seed).unwrap();
            assert!(r.recovery_error <= 1e-8, "{r:?}");
            assert!(r.parameter_error <= 1e-8);
            assert!(r.identity_error <= 1e-6 && r.scaling_error <= 1e-6);
        }
        assert_eq!(plant_and_recover(7).unwrap(), plant_and_recover(7).unwrap());
    }

    #[test]
    fn optimality_under_perturbation() {
        let mut rng = Rng::new(4);
        let target = Tensor::random_uniform([1, 2, 8, 8], &mut rng, -1.0, 1.0).unwrap();
        let p = problem(&mut rng, |_| target.clone());
        let s = solve_joint_upsample(&p).unwrap();
        let best = s.map.objective(&p.x_l, &p.y_l).unwrap();
        for _ in 0..20 {
            let mut m = s.map.clone();
            for v in m.weight.iter_mut() {
                *v += 1e-3 * (2.0 * rng.next_f64() - 1.0);
            }
            assert!(m.objective(&p.x_l, &p.y_l).unwrap() >= best);
        }
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = Rng::new(5);
        let target = Tensor::random_uniform([1, 3, 8, 8], &mut rng, -1.0, 1.0).unwrap();
        let p = problem(&mut rng, |_| target.clone());
        let base = solve_joint_upsample(&p).unwrap();
        let alpha = -2.5;
        let scaled = solve_joint_upsample(&JointUpsampleProblem { y_l: p.y_l.scale(alpha), ..p.clone() }).unwrap();
        assert!(max_abs_diff(&scaled.y_h, &base.y_h.scale(alpha)).unwrap() <= 1e-10);
    }

    #[test]
    fn too_few_pixels_is_ill_posed() {
        let x_l = Tensor::<f64>::zeros([1, 4, 2, 2]).unwrap();
        let p = JointUpsampleProblem { y_l: x_l.clone(), x_h: x_l.clone(), x_l };
        assert!(matches!(solve_joint_upsample(&p), Err(Error::IllPosed(_))));
    }

    #[test]
    fn constant_guidance_stays_finite() {
        // Rank-deficient Gram: damping keeps the solve well defined.
        let x_l = Tensor::<f64>::full([1, 2, 4, 4], 1.0).unwrap();
        let y_l = Tensor::<f64>::full([1, 1, 4, 4], 3.0).unwrap();
        let p = JointUpsampleProblem { x_h: x_l.clone(), x_l, y_l };
        let s = solve_joint_upsample(&p).unwrap();
        assert!(s.y_h.all_finite());
        assert!(s.residual < 1e-6);
    }

    fn head(rng: &mut Rng, cin: usize, cout: usize) -> ConvWeights<f64> {
        let mut w = ConvWeights::init_uniform(&ConvSpec::new(cin, cout, 3), 3f64.sqrt(), true, rng).unwrap();
        w.bias = Some((0..cout).map(|_| rng.next_f64() - 0.5).collect());
        w
    }

    #[test]
    fn eq4_plant_and_recover() {
        let mut rng = Rng::new(6);
        let x = Tensor::random_uniform([1, 3, 12, 12], &mut rng, -1.0, 1.0).unwrap();
        let h = head(&mut rng, 3, 4);
        let y_m = conv2d(&x, &h, &conv_spec_for(&h, 1, 1).unwrap()).unwrap();
        let truth = planted(&mut rng, 4, 2);
        let y_s = truth.apply(&reduce_even(&y_m).unwrap()).unwrap();
        let a = approximate_y_d(&x, &y_s, &h).unwrap();
        assert!(max_abs_diff(&reduce_even(&a.y).unwrap(), &y_s).unwrap() <= 1e-8);
        assert_eq!(a.y.shape().dims(), [1, 2, 12, 12]);
    }

    #[test]
    fn eq4_delta_head_is_identity() {
        let x = Tensor::<f64>::random_uniform([1, 2, 8, 8], &mut Rng::new(7), -1.0, 1.0).unwrap();
        let mut k = vec![0.0; 2 * 2 * 9];
        k[4] = 1.0;
        k[(2 + 1) * 9 + 4] = 1.0;
        let h = ConvWeights::new(Tensor::from_vec([2, 2, 3, 3], k).unwrap(), None);
        let a = approximate_y_d(&x, &reduce_even(&x).unwrap(), &h).unwrap();
        assert!(max_abs_diff(&a.y, &x).unwrap() < 1e-6);
    }

    #[test]
    fn eq4_nonlinear_chain_reports_residual() {
        let mut rng = Rng::new(8);
        let x = Tensor::random_uniform([1, 3, 16, 16], &mut rng, -1.0, 1.0).unwrap();
        let sw = StageWeights { head: head(&mut rng, 3, 4), body: vec![head(&mut rng, 4, 4), head(&mut rng, 4, 4)] };
        let y_s = stride_stage(&x, &sw).unwrap().map(|v| v.max(0.0));
        let a = approximate_y_d(&x, &y_s, &sw.head).unwrap();
        assert!(a.residual > 0.0);
        // The fit residual is exactly what survives on the even-even lattice.
        let direct = rms_diff(&reduce_even(&a.y).unwrap(), &y_s).unwrap();
        assert!((direct - a.residual).abs() <= 1e-10);
    }

    #[test]
    fn eq4_rejects_mismatched_target() {
        let x = Tensor::<f64>::zeros([1, 2, 8, 8]).unwrap();
        let h = ConvWeights::new(Tensor::zeros([2, 2, 3, 3]).unwrap(), None);
        assert!(approximate_y_d(&x, &Tensor::zeros([1, 2, 8, 8]).unwrap(), &h).is_err());
    }
}
