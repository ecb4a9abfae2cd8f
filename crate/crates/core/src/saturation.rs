//! Hill saturation `y = x^a / (x^a + g^a)` with the exponent held at or above 2.

use serde::{Deserialize, Serialize};

use crate::numeric::{sigmoid, softplus, softplus_inverse};

/// Smallest admissible slope exponent.
pub const MIN_SLOPE: f64 = 2.0;
/// Floor added to the half-saturation point.
pub const HALF_SATURATION_FLOOR: f64 = 1e-4;

/// Constrained Hill parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillParams {
    /// Slope exponent, at least [`MIN_SLOPE`].
    pub a: f64,
    /// Half-saturation point in scaled driver units.
    pub g: f64,
}

/// Unconstrained counterpart of [`HillParams`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HillRaw {
    pub a_raw: f64,
    pub g_raw: f64,
}

/// Partial derivatives of the Hill response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillGradients {
    pub dx: f64,
    pub da: f64,
    pub dg: f64,
}

impl HillParams {
    pub fn is_valid(&self) -> bool {
        self.a >= MIN_SLOPE && self.g > 0.0 && self.a.is_finite() && self.g.is_finite()
    }
}

/// Returns `(y, 1 - y)` evaluated without cancellation.
fn hill_pair(x: f64, p: HillParams) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    // log of (g/x)^a
    let lq = p.a * (p.g.ln() - x.ln());
    if lq > 0.0 {
        let e = (-lq).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    } else {
        let e = lq.exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    }
}

pub fn hill(x: f64, p: HillParams) -> f64 {
    hill_pair(x, p).0
}

/// Analytic partials of [`hill`]; all zero at `x = 0`.
pub fn hill_gradients(x: f64, p: HillParams) -> HillGradients {
    if x <= 0.0 {
        return HillGradients {
            dx: 0.0,
            da: 0.0,
            dg: 0.0,
        };
    }
    let (y, comp) = hill_pair(x, p);
    let core = y * comp;
    HillGradients {
        dx: core * p.a / x,
        da: core * (x.ln() - p.g.ln()),
        dg: -core * p.a / p.g,
    }
}

impl HillRaw {
    /// Raw values that map exactly or nearly onto `p` under [`constrain`].
    pub fn from_params(p: HillParams) -> Self {
        Self {
            a_raw: softplus_inverse((p.a - MIN_SLOPE).max(1e-9)),
            g_raw: softplus_inverse((p.g - HALF_SATURATION_FLOOR).max(1e-9)),
        }
    }
}

/// `a = 2 + softplus(a_raw)`, `g = softplus(g_raw) + 1e-4`.
pub fn constrain(raw: HillRaw) -> HillParams {
    HillParams {
        a: MIN_SLOPE + softplus(raw.a_raw),
        g: softplus(raw.g_raw) + HALF_SATURATION_FLOOR,
    }
}

/// Derivatives `(da/da_raw, dg/dg_raw)` of [`constrain`].
pub fn constrain_jacobian(raw: HillRaw) -> (f64, f64) {
    (sigmoid(raw.a_raw), sigmoid(raw.g_raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(a: f64, g: f64) -> HillParams {
        HillParams { a, g }
    }

    /// Independent evaluation of `y` and `1 - y` by direct powers.
    fn oracle(x: f64, a: f64, g: f64) -> (f64, f64) {
        let xa = x.powf(a);
        let ga = g.powf(a);
        (xa / (xa + ga), ga / (xa + ga))
    }

    fn central(f: impl Fn(f64) -> f64, at: f64, h: f64) -> f64 {
        (f(at + h) - f(at - h)) / (2.0 * h)
    }

    #[test]
    fn half_saturation_and_origin() {
        assert_eq!(hill(5.0, p(3.0, 5.0)), 0.5);
        assert_eq!(hill(0.0, p(2.0, 5.0)), 0.0);
        assert!((hill(10.0, p(2.0, 5.0)) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn gradients_at_half_saturation() {
        let gr = hill_gradients(5.0, p(2.0, 5.0));
        assert!((gr.dx - 0.1).abs() < 1e-15);
        assert!((gr.dg + 0.1).abs() < 1e-15);
        assert_eq!(gr.da, 0.0);
        let num = central(|x| hill(x, p(2.0, 5.0)), 5.0, 1e-6);
        assert!((num - 0.1).abs() < 1e-9);
    }

    #[test]
    fn gradients_vanish_at_origin() {
        let gr = hill_gradients(0.0, p(2.0, 1.0));
        assert_eq!((gr.dx, gr.da, gr.dg), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constrain_floor_and_ln2() {
        let low = constrain(HillRaw { a_raw: -800.0, g_raw: -800.0 });
        assert!(low.a >= MIN_SLOPE && low.g > 0.0);
        assert_eq!(low.a, 2.0);
        let zero = constrain(HillRaw::default());
        assert!((zero.a - (2.0 + std::f64::consts::LN_2)).abs() < 1e-15);
        assert!((zero.a - 2.6931).abs() < 1e-4);
    }

    #[test]
    fn s_shape_second_derivative() {
        let hp = p(2.5, 0.8);
        let second = |x: f64| {
            let h = 1e-4 * x;
            (hill(x + h, hp) - 2.0 * hill(x, hp) + hill(x - h, hp)) / (h * h)
        };
        assert!(second(hp.g / 4.0) > 0.0);
        assert!(second(hp.g * 4.0) < 0.0);
    }

    proptest! {
        #[test]
        fn constrain_always_valid(a_raw in -1e3f64..1e3, g_raw in -1e3f64..1e3) {
            let p = constrain(HillRaw { a_raw, g_raw });
            prop_assert!(p.is_valid());
        }

        #[test]
        fn monotone_and_bounded(x1 in 0.0f64..20.0, dx in 0.0f64..20.0, a in 2.0f64..8.0, g in 0.01f64..10.0) {
            let hp = p(a, g);
            let (y1, y2) = (hill(x1, hp), hill(x1 + dx, hp));
            prop_assert!(y1 <= y2);
            prop_assert!((0.0..=1.0).contains(&y1) && (0.0..=1.0).contains(&y2));
        }

        #[test]
        fn half_saturation_identity(a in 2.0f64..10.0, g in 1e-3f64..1e3) {
            prop_assert!((hill(g, p(a, g)) - 0.5).abs() < 1e-12);
        }

        #[test]
        fn gradients_match_finite_differences(x in 1e-3f64..10.0, a in 2.0f64..6.0, g in 0.05f64..5.0) {
            let an = hill_gradients(x, p(a, g));
            // differentiate whichever of y, 1 - y is small at the centre point
            let lower = oracle(x, a, g).0 <= 0.5;
            let pick = |x: f64, a: f64, g: f64| {
                let (y, c) = oracle(x, a, g);
                if lower { y } else { -c }
            };
            let rel = |an: f64, num: f64| (an - num).abs() / an.abs().max(num.abs()).max(1e-300);
            let checks = [
                (an.dx, central(|v| pick(v, a, g), x, 1e-5 * x)),
                (an.da, central(|v| pick(x, v, g), a, 1e-5)),
                (an.dg, central(|v| pick(x, a, v), g, 1e-5 * g)),
            ];
            for (a_val, n_val) in checks {
                if a_val.abs() < 1e-250 && n_val.abs() < 1e-250 { continue; }
                prop_assert!(rel(a_val, n_val) < 1e-6, "analytic {a_val} numeric {n_val}");
            }
        }
    }
}
