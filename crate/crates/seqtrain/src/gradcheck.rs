//! Central finite-difference utilities for verifying hand-derived gradients.
//!
//! The numeric probe is independent of any backward pass: it only calls a
//! scalar objective. Relative error uses max(|a|, |n|, 1e-3) as denominator,
//! which acts as a relative test for gradients of ordinary size and an
//! absolute test (1e-8 at tol 1e-5) near zero where central differences run
//! out of digits.

/// Central difference gradient of `f` at `x` with step `eps` per coordinate.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Largest relative disagreement between analytic and numeric gradients.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}
