//! Central-difference gradient checking.

/// Numeric gradient of `f` at `x` by central differences with step `eps`.
pub fn central_difference<F>(f: &mut F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + eps;
        let plus = f(&point);
        point[i] = orig - eps;
        let minus = f(&point);
        point[i] = orig;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Numeric directional derivative of `f` at `x` along `dir`.
pub fn directional_difference<F>(f: &mut F, x: &[f64], dir: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), dir.len());
    let plus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + eps * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - eps * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

/// Worst relative error between an analytic and a numeric gradient.
///
/// Per entry: `|a - n| / max(|a|, |n|)`, with an absolute floor of `1e-8` so
/// that entries which are numerically zero on both sides do not divide by
/// zero. An entry passes a tolerance `tol` when
/// `|a - n| <= tol * max(|a|, |n|) + 1e-8`.
pub fn max_grad_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            let scale = a.abs().max(n.abs());
            (diff - 1e-8).max(0.0) / scale.max(1e-12)
        })
        .fold(0.0, f64::max)
}
