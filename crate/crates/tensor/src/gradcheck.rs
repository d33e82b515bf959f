//! Central finite-difference gradient checking.
//!
//! The harness is part of the library (not just the test tree) because every
//! downstream crate with differentiable code checks its gradients the same
//! way: perturb a flat parameter vector, rebuild the scalar loss, compare.

/// Central difference gradient of `f` at `x` with step `h` per coordinate.
pub fn central_diff<F>(f: &mut F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst relative error between analytic and numeric gradients:
/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero entries from
/// inflating the ratio; pick it well below the gradient's typical scale.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs()).max(floor);
        worst = worst.max((a - n).abs() / denom);
    }
    worst
}

/// Convenience: check `analytic` against central differences of `f` at `x`.
/// Returns the worst relative error.
pub fn check<F>(f: &mut F, x: &[f64], analytic: &[f64], h: f64, floor: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_diff(f, x, h);
    max_rel_err(analytic, &numeric, floor)
}
