//! Scalar Gaussian kernels and the truncated affine-Gaussian integrals that
//! every closed-form moment expression is built from.
//!
//! The unchecked kernels ([`phi`], [`big_phi`]) are used on hot paths; the
//! `std_normal_*` functions validate their input and are the public entry
//! points for callers that cannot guarantee finiteness.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density without input validation.
#[inline]
pub fn phi(nu: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * nu * nu).exp()
}

/// Standard normal CDF without input validation.
///
/// Evaluated through `erfc` on both sides so that the lower tail keeps full
/// relative accuracy.
#[inline]
pub fn big_phi(nu: f64) -> f64 {
    0.5 * libm::erfc(-nu * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(nu: f64) -> Result<f64> {
    check_finite(nu)?;
    Ok(phi(nu))
}

pub fn std_normal_cdf(nu: f64) -> Result<f64> {
    check_finite(nu)?;
    Ok(big_phi(nu))
}

/// Inverse of the standard normal CDF.
///
/// Acklam's rational approximation as a seed (relative error ~1e-9), then two
/// Newton steps on `Phi(x) - p`. For `p > 1/2` the lower-tail problem in
/// `1 - p` is solved instead; that subtraction is exact in binary floating
/// point.
pub fn std_normal_inv_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "quantile level must lie in (0, 1), got {p}"
        )));
    }
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

fn lower_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 0.5);
    let mut x = acklam_seed(p);
    for _ in 0..2 {
        let dens = phi(x);
        if dens == 0.0 {
            break;
        }
        x -= (big_phi(x) - p) / dens;
    }
    x
}

fn acklam_seed(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// `∫_{-∞}^{xibar} (alpha ξ + beta) N(ξ; mu, sigma²) dξ`.
pub fn trunc_affine_lower(alpha: f64, beta: f64, xibar: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let z = (xibar - mu) / sigma;
    Ok(-alpha * sigma * phi(z) + (alpha * mu + beta) * big_phi(z))
}

/// `∫_{xibar}^{∞} (alpha ξ + beta) N(ξ; mu, sigma²) dξ`.
pub fn trunc_affine_upper(alpha: f64, beta: f64, xibar: f64, mu: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    let z = (xibar - mu) / sigma;
    // 1 - Phi(z) = Phi(-z), without the cancellation.
    Ok(alpha * sigma * phi(z) + (alpha * mu + beta) * big_phi(-z))
}

/// One-dimensional Gaussian obtained by projecting `N(mu, Sigma)` onto `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedBelief {
    /// `gᵀμ`
    pub mu_g: f64,
    /// `gᵀΣg`; the variance, not the standard deviation.
    pub var_g: f64,
    /// `gᵀx̄`
    pub xbar_g: f64,
}

impl ProjectedBelief {
    /// Standardized distance of the surface offset from the projected mean,
    /// `(x̄_g - μ_g) / σ_g`, with `var_g` floored at `floor`.
    pub fn standardized_offset(&self, floor: f64) -> f64 {
        (self.xbar_g - self.mu_g) / self.var_g.max(floor).sqrt()
    }
}

pub fn project_belief(
    g: &DVector<f64>,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    xbar: &DVector<f64>,
) -> Result<ProjectedBelief> {
    let n = g.len();
    if mean.len() != n || xbar.len() != n || cov.nrows() != n || cov.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "projection direction has length {n}, mean {}, xbar {}, covariance {}x{}",
            mean.len(),
            xbar.len(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    if g.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateDirection);
    }
    Ok(ProjectedBelief {
        mu_g: g.dot(mean),
        var_g: quad_form(cov, g),
        xbar_g: g.dot(xbar),
    })
}

/// `vᵀ M v`
pub(crate) fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (m * v).dot(v)
}

fn check_finite(nu: f64) -> Result<()> {
    if nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("argument must be finite, got {nu}")))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("scale must be positive, got {sigma}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use approx::assert_relative_eq;

    #[test]
    fn pdf_values() {
        assert_eq!(std_normal_pdf(0.0).unwrap(), 0.398_942_280_401_432_7);
        assert_relative_eq!(std_normal_pdf(1.0).unwrap(), 0.241_970_724_519_143_37, max_relative = 1e-15);
        assert_eq!(std_normal_pdf(-3.0).unwrap(), std_normal_pdf(3.0).unwrap());
        assert!(std_normal_pdf(f64::NAN).is_err());
        assert!(std_normal_pdf(f64::INFINITY).is_err());
    }

    #[test]
    fn cdf_values() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        assert!((std_normal_cdf(10.0).unwrap() - 1.0).abs() <= 1e-15);
        assert!((std_normal_cdf(1.0).unwrap() - 0.841_344_746_068_542_9).abs() <= 1e-15);
        assert!(std_normal_cdf(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn quantile_values() {
        assert_eq!(std_normal_inv_cdf(0.5).unwrap(), 0.0);
        // Frozen from a bisection root-find of Phi(x) = 0.975 (see bisection_quantile below).
        assert!((std_normal_inv_cdf(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-13);
        assert!((std_normal_inv_cdf(0.99).unwrap() - 2.326_347_874_040_841).abs() < 1e-13);
        // dyadic levels so that 1 - (1 - p) == p
        for p in [2f64.powi(-40), 2f64.powi(-7), 0.125, 0.3] {
            let (lo, hi) = (std_normal_inv_cdf(p).unwrap(), std_normal_inv_cdf(1.0 - p).unwrap());
            assert!((lo + hi).abs() < 1e-12, "p={p}");
        }
        assert!(std_normal_inv_cdf(1e-300).unwrap() < -37.0);
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(std_normal_inv_cdf(bad).is_err());
        }
    }

    fn bisection_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if big_phi(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quantile_matches_bisection_oracle() {
        for &p in &[1e-10, 1e-4, 0.02425, 0.1, 0.5, 0.8, 0.975, 0.99, 1.0 - 1e-9] {
            let q = std_normal_inv_cdf(p).unwrap();
            // upper levels are bisected in the lower tail, where Phi has full precision
            let oracle = if p > 0.5 { -bisection_quantile(1.0 - p) } else { bisection_quantile(p) };
            assert!((q - oracle).abs() < 1e-9, "p={p}: {q} vs {oracle}");
        }
    }

    #[test]
    fn truncated_affine_examples() {
        assert!((trunc_affine_lower(0.0, 1.0, 1e3, 0.3, 2.0).unwrap() - 1.0).abs() < 1e-12);
        let lo = trunc_affine_lower(1.0, 0.0, 0.0, 0.0, 1.0).unwrap();
        assert!((lo + 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(trunc_affine_lower(1.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(trunc_affine_upper(1.0, 0.0, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn truncated_affine_matches_quadrature() {
        // ∫_{-∞}^0 ξ φ(ξ) dξ by adaptive quadrature.
        let q = quad::integrate(|x| x * phi(x), -40.0, 0.0, 1e-14, 1e-16);
        assert!((q + 0.398_942_280_401_432_7).abs() < 1e-13);
    }

    #[test]
    fn projection_examples() {
        let g = DVector::from_vec(vec![1.0, 0.0]);
        let mu = DVector::from_vec(vec![-3.0, 2.0]);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 1.0]));
        let xbar = DVector::zeros(2);
        let p = project_belief(&g, &mu, &cov, &xbar).unwrap();
        assert_eq!((p.mu_g, p.var_g, p.xbar_g), (-3.0, 0.25, 0.0));

        let g = DVector::from_vec(vec![1.0, 1.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert_eq!(project_belief(&g, &mu, &cov, &xbar).unwrap().var_g, 3.0);

        let g = DVector::from_vec(vec![0.6, 0.8]);
        let p = project_belief(&g, &mu, &DMatrix::identity(2, 2), &xbar).unwrap();
        assert!((p.var_g - 1.0).abs() < 1e-15);

        assert!(matches!(
            project_belief(&DVector::zeros(2), &mu, &cov, &xbar),
            Err(Error::DegenerateDirection)
        ));
        assert!(project_belief(&DVector::zeros(3), &mu, &cov, &xbar).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn cdf_symmetry(nu in -40.0f64..40.0) {
                prop_assert!((big_phi(nu) + big_phi(-nu) - 1.0).abs() <= 1e-14);
            }

            #[test]
            fn cdf_monotone(a in -10.0f64..10.0, d in 0.0f64..1.0) {
                prop_assert!(big_phi(a + d) >= big_phi(a));
            }

            #[test]
            fn quantile_roundtrip(p in 1e-12f64..(1.0 - 1e-12)) {
                let x = std_normal_inv_cdf(p).unwrap();
                prop_assert!((big_phi(x) - p).abs() <= 1e-12);
            }

            #[test]
            fn lower_plus_upper_is_full_expectation(
                alpha in -5.0f64..5.0, beta in -5.0f64..5.0, xibar in -5.0f64..5.0,
                mu in -5.0f64..5.0, sigma in 0.01f64..5.0,
            ) {
                let lo = trunc_affine_lower(alpha, beta, xibar, mu, sigma).unwrap();
                let up = trunc_affine_upper(alpha, beta, xibar, mu, sigma).unwrap();
                let full = alpha * mu + beta;
                prop_assert!((lo + up - full).abs() <= 1e-13);
            }
        }
    }
}
