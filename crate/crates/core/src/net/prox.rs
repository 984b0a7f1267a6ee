//! Soft-thresholding and the softplus threshold reparameterization.

use crate::error::{Error, Result};

/// `sign(z) * max(|z| - tau, 0)`, the proximal map of `tau * ||.||_1`.
pub fn soft_threshold(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::arg(format!("threshold must be >= 0, got {tau}")));
    }
    Ok(z.iter().map(|&v| soft_scalar(v, tau)).collect())
}

#[inline]
pub(crate) fn soft_scalar(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn formula_examples() {
        assert_eq!(soft_threshold(&[2.0], 0.5).unwrap(), vec![1.5]);
        assert_eq!(soft_threshold(&[-0.3], 0.5).unwrap(), vec![0.0]);
        assert_eq!(soft_threshold(&[-2.0], 0.5).unwrap(), vec![-1.5]);
        let z = [0.3, -7.25, 0.0, 1e-300];
        assert_eq!(soft_threshold(&z, 0.0).unwrap(), z.to_vec());
    }

    #[test]
    fn negative_threshold_rejected() {
        assert!(matches!(
            soft_threshold(&[1.0], -0.1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn softplus_roundtrip() {
        for y in [1e-6, 0.01, 0.5, 3.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
        assert!(softplus(1000.0).is_finite());
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        let h = 1e-6;
        for x in [-5.0, -0.3, 0.0, 0.7, 8.0] {
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((fd - sigmoid(x)).abs() < 1e-9);
        }
    }

    /// Brute-force prox: minimize 0.5 (x - z)^2 + tau |x| on a fine grid.
    fn grid_prox(z: f64, tau: f64, step: f64) -> f64 {
        let lo = z - tau - 1.0;
        let n = ((2.0 * tau + 2.0) / step) as usize;
        (0..=n)
            .map(|i| lo + i as f64 * step)
            .map(|x| (x, 0.5 * (x - z).powi(2) + tau * x.abs()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0
    }

    #[test]
    fn matches_grid_search_prox() {
        let mut rng = SeededRng::new(77, 0);
        let step = 1e-4;
        for _ in 0..50 {
            let z = rng.uniform_range(-3.0, 3.0);
            let tau = rng.uniform_range(0.0, 1.5);
            let exact = soft_scalar(z, tau);
            assert!((exact - grid_prox(z, tau, step)).abs() <= step);
        }
    }

    proptest! {
        #[test]
        fn nonexpansive(a in prop::collection::vec(-5.0f64..5.0, 16),
                        b in prop::collection::vec(-5.0f64..5.0, 16),
                        tau in 0.0f64..3.0) {
            let sa = soft_threshold(&a, tau).unwrap();
            let sb = soft_threshold(&b, tau).unwrap();
            let d_out: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum();
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(d_out <= d_in + 1e-12);
        }

        #[test]
        fn shrinks_and_kills_dead_zone(z in -5.0f64..5.0, tau in 0.0f64..3.0) {
            let s = soft_scalar(z, tau);
            prop_assert!(s.abs() <= z.abs());
            if z.abs() <= tau {
                prop_assert_eq!(s, 0.0);
            }
        }
    }
}
