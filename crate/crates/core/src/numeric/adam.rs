use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub moment_decays: (f64, f64),
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(size: usize, learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; size],
            second_moment: vec![0.0; size],
            learning_rate,
            moment_decays: (0.9, 0.999),
            epsilon: 1e-8,
        }
    }
}

/// One adaptive-moment step. Returns the updated parameters and state.
pub fn optimizer_step(
    params: &[f64],
    gradient: &[f64],
    mut state: OptimizerState,
) -> Result<(Vec<f64>, OptimizerState)> {
    let n = params.len();
    for len in [gradient.len(), state.first_moment.len(), state.second_moment.len()] {
        if len != n {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    let (b1, b2) = state.moment_decays;
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;

    let updated = params
        .iter()
        .zip(gradient)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
        .map(|((&p, &g), (m, v))| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            p - lr * m_hat / (v_hat.sqrt() + eps)
        })
        .collect();
    Ok((updated, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut state = OptimizerState::new(2, 0.01);
        state.first_moment = vec![1.0, -1.0];
        state.second_moment = vec![4.0, 1.0];
        state.step_count = 3;
        let (p, s) = optimizer_step(&[1.0, 2.0], &[0.0, 0.0], state).unwrap();
        // moments are nonzero so the step itself is not zero; decay is what we check
        assert!(s.first_moment[0].abs() < 1.0 && s.second_moment[0] < 4.0);
        assert_eq!(s.step_count, 4);

        let (p2, _) = optimizer_step(&[1.0, 2.0], &[0.0, 0.0], OptimizerState::new(2, 0.01)).unwrap();
        assert_eq!(p2, vec![1.0, 2.0]);
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        // m_hat = 1, v_hat = 1, step = 0.1 / (1 + 1e-8)
        let (p, s) = optimizer_step(&[0.5], &[1.0], OptimizerState::new(1, 0.1)).unwrap();
        let expected = 0.5 - 0.1 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn deterministic() {
        let state = OptimizerState::new(3, 0.01);
        let a = optimizer_step(&[1.0, -2.0, 3.0], &[0.3, 0.1, -0.7], state.clone()).unwrap();
        let b = optimizer_step(&[1.0, -2.0, 3.0], &[0.3, 0.1, -0.7], state).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn size_mismatch() {
        assert!(matches!(
            optimizer_step(&[1.0, 2.0], &[1.0], OptimizerState::new(2, 0.1)),
            Err(Error::SizeMismatch { .. })
        ));
    }
}
