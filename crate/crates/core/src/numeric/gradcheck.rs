/// Compares an analytic gradient against central finite differences.
///
/// Returns the largest per-coordinate relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
pub fn finite_difference_check<F>(mut loss_fn: F, params: &[f64], analytic_grad: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic_grad.len(), "gradient length");
    let mut probe = params.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss_fn(&probe);
        probe[i] = orig - step;
        let down = loss_fn(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic_grad[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_difference_check(|p| p[0] * p[0], &[3.0], &[6.0], 1e-5);
        assert!(err < 1e-8);
    }

    #[test]
    fn doubled_gradient_is_flagged() {
        let err = finite_difference_check(|p| p[0] * p[0] + p[1].sin(), &[3.0, 0.4], &[12.0, 2.0 * 0.4f64.cos()], 1e-5);
        assert!((err - 0.5).abs() < 1e-6, "{err}");
        // denominators use the larger magnitude, so doubling reads as 0.5 and a
        // sign flip reads as 2.0
        let flipped = finite_difference_check(|p| p[0] * p[0], &[3.0], &[-6.0], 1e-5);
        assert!((flipped - 2.0).abs() < 1e-6);
    }
}
