//! Dense numeric primitives shared by the learning modules.

mod adam;
mod gradcheck;
mod matrix;

pub use adam::{optimizer_step, OptimizerState};
pub use gradcheck::finite_difference_check;
pub use matrix::{matrix_exponential, DenseMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Huber transition point, in residual units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberSpec {
    pub delta: f64,
}

impl HuberSpec {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidConfig(format!("huber delta must be > 0, got {delta}")));
        }
        Ok(Self { delta })
    }

    /// Loss of a single residual.
    pub fn element_loss(&self, r: f64) -> f64 {
        let a = r.abs();
        if a <= self.delta {
            0.5 * r * r
        } else {
            self.delta * (a - 0.5 * self.delta)
        }
    }

    /// Derivative of [`element_loss`](Self::element_loss).
    pub fn element_gradient(&self, r: f64) -> f64 {
        r.clamp(-self.delta, self.delta)
    }
}

impl Default for HuberSpec {
    fn default() -> Self {
        Self { delta: 1.0 }
    }
}

/// Mean Huber loss over `residuals` and its gradient with respect to each residual.
pub fn huber_loss(residuals: &[f64], spec: HuberSpec) -> Result<(f64, Vec<f64>)> {
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFiniteInput("huber residual".into()));
    }
    if residuals.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = residuals.len() as f64;
    let loss = residuals.iter().map(|&r| spec.element_loss(r)).sum::<f64>() / n;
    let grad = residuals
        .iter()
        .map(|&r| spec.element_gradient(r) / n)
        .collect();
    Ok((loss, grad))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `gradient` so its global L2 norm does not exceed `max_norm`.
pub fn clip_gradient_norm(gradient: &[f64], max_norm: f64) -> Vec<f64> {
    let norm = l2_norm(gradient);
    if norm <= max_norm || norm == 0.0 {
        return gradient.to_vec();
    }
    let scale = max_norm / norm;
    gradient.iter().map(|g| g * scale).collect()
}

/// Fraction of the base learning rate reached at the end of a cosine schedule.
pub const LR_FLOOR_FRACTION: f64 = 1e-3;

/// Cosine decay from `base` at step 0 to `base * LR_FLOOR_FRACTION` at `total`.
pub fn cosine_learning_rate(base: f64, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return base;
    }
    let progress = (step as f64 / (total - 1) as f64).min(1.0);
    let floor = base * LR_FLOOR_FRACTION;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huber_at_zero() {
        let (loss, grad) = huber_loss(&[0.0], HuberSpec::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, vec![0.0]);
    }

    #[test]
    fn huber_knee_and_tail() {
        let spec = HuberSpec::new(0.7).unwrap();
        assert!((spec.element_loss(0.7) - 0.5 * 0.49).abs() < 1e-15);
        let spec = HuberSpec::new(1.0).unwrap();
        let (loss, grad) = huber_loss(&[3.0], spec).unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(grad, vec![1.0]);
    }

    #[test]
    fn huber_mean_and_gradient_scaling() {
        let (loss, grad) = huber_loss(&[0.5, -2.0], HuberSpec::default()).unwrap();
        assert!((loss - (0.125 + 1.5) / 2.0).abs() < 1e-15);
        assert_eq!(grad, vec![0.25, -0.5]);
    }

    #[test]
    fn huber_is_c1_at_knee() {
        let spec = HuberSpec::new(1.3).unwrap();
        let d = spec.delta;
        let eps = 1e-9;
        for sign in [1.0, -1.0] {
            let lo = spec.element_loss(sign * (d - eps));
            let hi = spec.element_loss(sign * (d + eps));
            assert!((hi - lo).abs() < 1e-8);
            let glo = spec.element_gradient(sign * (d - eps));
            let ghi = spec.element_gradient(sign * (d + eps));
            assert!((ghi - glo).abs() < 1e-8);
        }
    }

    #[test]
    fn huber_rejects_non_finite() {
        assert!(matches!(
            huber_loss(&[1.0, f64::NAN], HuberSpec::default()),
            Err(Error::NonFiniteInput(_))
        ));
        assert!(HuberSpec::new(0.0).is_err());
    }

    #[test]
    fn clipping_cases() {
        assert_eq!(clip_gradient_norm(&[3.0, 4.0], 10.0), vec![3.0, 4.0]);
        let c = clip_gradient_norm(&[3.0, 4.0], 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_gradient_norm(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [1e-6, 0.01, 0.5, 1.0, 5.0, 40.0] {
            let x = softplus_inverse(y);
            assert!((softplus(x) - y).abs() <= 1e-12 * y.max(1.0), "{y}");
        }
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clipping_never_increases_norm_and_keeps_direction(
                g in proptest::collection::vec(-100.0f64..100.0, 1..20),
                max_norm in 0.01f64..50.0,
            ) {
                let c = clip_gradient_norm(&g, max_norm);
                let (n0, n1) = (l2_norm(&g), l2_norm(&c));
                prop_assert!(n1 <= n0 + 1e-12);
                prop_assert!(n1 <= max_norm + 1e-12 || n1 == n0);
                if n0 > 0.0 {
                    let cos = g.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>() / (n0 * n1);
                    prop_assert!((cos - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
