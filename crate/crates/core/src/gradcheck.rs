//! Central finite differences for validating analytic gradients.

/// Numerical gradient of `f` at `x` with symmetric step `eps`.
pub fn central_difference<F>(x: &[f64], eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Largest elementwise `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// near-zero components from dominating on rounding noise.
pub fn max_relative_error_with_floor(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    max_relative_error_with_floor(analytic, numeric, 1e-6)
}
