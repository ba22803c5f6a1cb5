/// Denominator floor for [`relative_error`].
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares an analytic gradient against central differences.
///
/// `f` maps a flat parameter vector to `(loss, gradient)`; it is called once at
/// `params` for the analytic gradient and twice per coordinate for the
/// numeric one (those gradients are ignored). Returns the worst relative error.
pub fn grad_check(params: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>)) -> f64 {
    if params.is_empty() {
        return 0.0;
    }
    let (_, analytic) = f(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let mut theta = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..theta.len() {
        let orig = theta[k];
        theta[k] = orig + eps;
        let (plus, _) = f(&theta);
        theta[k] = orig - eps;
        let (minus, _) = f(&theta);
        theta[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[k], numeric));
    }
    worst
}
