//! The bistable cubic `f(u, w) = u (1 - u) (u - w)` and its partial derivatives.
//!
//! The same nonlinearity drives both the feature equation (with `w = alpha`)
//! and the phase equation (with `w = beta`). Its roots are `0`, `1` and `w`;
//! the outer two are always attracting for the continuous flow.

#[inline]
pub fn reaction(u: f64, w: f64) -> f64 {
    u * (1.0 - u) * (u - w)
}

/// `d/du [u (1 - u) (u - w)] = -3u^2 + 2(1 + w)u - w`.
#[inline]
pub fn reaction_du(u: f64, w: f64) -> f64 {
    -3.0 * u * u + 2.0 * (1.0 + w) * u - w
}

/// `d/dw [u (1 - u) (u - w)] = -u (1 - u)`.
#[inline]
pub fn reaction_dw(u: f64, _w: f64) -> f64 {
    -u * (1.0 - u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frozen_values() {
        assert_eq!(reaction(0.0, 0.7), 0.0);
        assert_eq!(reaction(1.0, -3.0), 0.0);
        assert_eq!(reaction(0.5, 0.0), 0.125);
        assert_eq!(reaction_du(0.0, 0.0), 0.0);
        assert_eq!(reaction_du(0.0, 1.0), -1.0);
        assert_eq!(reaction_dw(0.0, 12.0), 0.0);
        assert_eq!(reaction_dw(0.5, -4.0), -0.25);
    }

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    proptest! {
        #[test]
        fn du_matches_finite_difference(u in -2.0f64..2.0, w in -2.0f64..2.0) {
            let fd = central(|z| reaction(z, w), u);
            prop_assert!((fd - reaction_du(u, w)).abs() <= 1e-8);
        }

        #[test]
        fn dw_matches_finite_difference(u in -2.0f64..2.0, w in -2.0f64..2.0) {
            let fd = central(|z| reaction(u, z), w);
            prop_assert!((fd - reaction_dw(u, w)).abs() <= 1e-8);
        }

        #[test]
        fn roots_and_symmetry(u in -3.0f64..3.0, w in -3.0f64..3.0) {
            prop_assert_eq!(reaction(w, w), 0.0);
            let lhs = reaction(u, w);
            let rhs = -reaction(1.0 - u, 1.0 - w);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
