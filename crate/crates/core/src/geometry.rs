//! Embedding-space geometry: the distance the losses consume and the
//! correspondence between KL divergence balls and metric balls.
//!
//! Distances between embeddings are plain Euclidean. For spherical Gaussians
//! with shared scale σ the KL divergence collapses to a function of the mean
//! distance alone:
//!
//! ```text
//! KL( N(μ_a, σ²I) ‖ N(μ_b, σ²I) ) = ‖μ_a − μ_b‖² / (2σ²)
//! ```
//!
//! so "all distributions within KL divergence ε of the centroid" is exactly
//! "all means within metric radius σ·√(2ε)". [`radius_from_divergence`]
//! performs that conversion; the loss functions work with the metric radius.

use crate::scalar::Real;
use crate::{Error, Result};

/// Euclidean distance between two embeddings of equal dimension.
pub fn euclidean_distance<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let sq = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<F>();
    Ok(sq.sqrt())
}

/// KL divergence between two spherical Gaussians `N(mu_a, sigma² I)` and
/// `N(mu_b, sigma² I)` with the same scale.
///
/// Requires `sigma > 0`; the means must share a dimension.
pub fn kl_spherical_gaussian<F: Real>(mu_a: &[F], mu_b: &[F], sigma: F) -> Result<F> {
    check_sigma(sigma)?;
    let d = euclidean_distance(mu_a, mu_b)?;
    Ok(d * d / (F::of(2.0) * sigma * sigma))
}

/// Metric radius of the ball that a KL-divergence ball induces on means:
/// `sigma * sqrt(2 * kl_radius)`.
///
/// Requires `kl_radius >= 0` and `sigma > 0`. Monotone in both arguments.
pub fn radius_from_divergence<F: Real>(kl_radius: F, sigma: F) -> Result<F> {
    check_sigma(sigma)?;
    if kl_radius < F::zero() || !kl_radius.is_finite() {
        return Err(Error::NegativeRadius {
            got: kl_radius.as_f64(),
        });
    }
    Ok(sigma * (F::of(2.0) * kl_radius).sqrt())
}

fn check_sigma<F: Real>(sigma: F) -> Result<()> {
    if sigma <= F::zero() || !sigma.is_finite() {
        return Err(Error::NonPositiveSigma {
            got: sigma.as_f64(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    #[test]
    fn distance_three_four_five() {
        let d: f64 = euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((d - 5.0).abs() < TOL);
    }

    #[test]
    fn distance_zero_iff_equal() {
        let v = [1.5, -2.25, 0.5];
        assert_eq!(euclidean_distance(&v, &v).unwrap(), 0.0);
        let d = euclidean_distance(&v, &[1.5, -2.25, 0.5 + 1e-9]).unwrap();
        assert!(d > 0.0);
    }

    #[test]
    fn distance_rejects_dimension_mismatch() {
        let err = euclidean_distance(&[1.0, 2.0], &[1.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                got: 1
            }
        ));
    }

    #[test]
    fn kl_same_mean_is_zero() {
        let mu = [0.25, 0.75, -1.0];
        assert_eq!(kl_spherical_gaussian(&mu, &mu, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn kl_matches_closed_form() {
        // distance 2 at sigma 1: KL = 4 / 2 = 2
        let kl: f64 = kl_spherical_gaussian(&[0.0, 0.0], &[0.0, 2.0], 1.0).unwrap();
        assert!((kl - 2.0).abs() < TOL);
        // scaling sigma by 2 divides the divergence by 4
        let kl_wide: f64 = kl_spherical_gaussian(&[0.0, 0.0], &[0.0, 2.0], 2.0).unwrap();
        assert!((kl_wide - 0.5).abs() < TOL);
    }

    #[test]
    fn kl_rejects_nonpositive_sigma() {
        for bad in [0.0, -1.0, f64::NAN] {
            let err = kl_spherical_gaussian(&[0.0], &[1.0], bad).unwrap_err();
            assert!(matches!(err, Error::NonPositiveSigma { .. }));
        }
    }

    #[test]
    fn radius_rejects_negative_inputs() {
        assert!(matches!(
            radius_from_divergence(-0.1, 1.0).unwrap_err(),
            Error::NegativeRadius { .. }
        ));
        assert!(matches!(
            radius_from_divergence(0.1, 0.0).unwrap_err(),
            Error::NonPositiveSigma { .. }
        ));
    }

    #[test]
    fn radius_divergence_round_trip() {
        // KL at exactly the converted metric radius must give back the KL
        // radius: KL = (sigma * sqrt(2 eps))² / (2 sigma²) = eps.
        let cases: [(f64, f64); 4] = [(0.5, 1.0), (2.0, 0.3), (10.0, 4.0), (1e-6, 0.05)];
        for (eps, sigma) in cases {
            let r = radius_from_divergence(eps, sigma).unwrap();
            let back = kl_spherical_gaussian(&[0.0], &[r], sigma).unwrap();
            let rel = (back - eps).abs() / eps.max(1e-300);
            assert!(rel < TOL, "eps {eps} sigma {sigma}: round trip {back}");
        }
    }

    #[test]
    fn radius_is_monotone_in_both_arguments() {
        let mut prev = 0.0f64;
        for k in 1..=20 {
            let r: f64 = radius_from_divergence(k as f64 * 0.37, 0.8).unwrap();
            assert!(r > prev);
            prev = r;
        }
        let mut prev = 0.0;
        for k in 1..=20 {
            let r: f64 = radius_from_divergence(0.37, k as f64 * 0.8).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }
}
