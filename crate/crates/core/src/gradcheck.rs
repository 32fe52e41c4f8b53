//! Central finite differences for checking analytic gradients.
//!
//! Independent of every backward pass in the crate: the only thing it
//! needs is a scalar loss as a function of a flat parameter vector.

/// Magnitude below which [`relative_error`] measures absolute error instead.
pub const REL_FLOOR: f64 = 1e-3;

/// `(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)` for every coordinate `i`.
pub fn central_difference(params: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Largest [`relative_error`] over paired elements.
pub fn max_relative_error<A: Copy + Into<f64>>(analytic: &[A], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| relative_error(a.into(), b))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_gradient() {
        // f = x0^2 * x1 + 3 x1  ->  (2 x0 x1, x0^2 + 3)
        let g = central_difference(&[1.5, -2.0], 1e-5, |p| p[0] * p[0] * p[1] + 3.0 * p[1]);
        assert!(max_relative_error(&[-6.0, 5.25], &g) < 1e-9);
    }

    #[test]
    fn floor_applies_near_zero() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }
}
