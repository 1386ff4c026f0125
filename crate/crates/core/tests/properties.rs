use std::f64::consts::PI;

use cyldimer::elliptic::EllipticContext;
use cyldimer::prediction::{cubic_residual, dg_moment, discrete_gaussian, green, moments_of_mu, CylinderGeometry};
use num_complex::Complex64 as C;
use proptest::prelude::*;

fn interior() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..1.0, 0.05f64..0.95)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wp_is_even_and_its_derivative_odd(ell in 2.0f64..15.0, (x, y) in interior()) {
        let ctx = EllipticContext::new(ell).unwrap();
        let z = C::new(x * ell, (2.0 * y - 1.0) * PI);
        prop_assume!(z.norm() > 0.1);
        let scale = ctx.wp(z).unwrap().norm().max(1.0);
        prop_assert!((ctx.wp(z).unwrap() - ctx.wp(-z).unwrap()).norm() < 1e-10 * scale);
        let d = ctx.wp_deriv(z, 1).unwrap();
        prop_assert!((d + ctx.wp_deriv(-z, 1).unwrap()).norm() < 1e-10 * d.norm().max(1.0));
    }

    #[test]
    fn moment_curve_satisfies_the_cubic(ell in 2.0f64..15.0, mu in 0.0f64..1.0) {
        let ctx = EllipticContext::new(ell).unwrap();
        let (m2, m3) = moments_of_mu(mu, &ctx).unwrap();
        prop_assert!(cubic_residual(m2, m3, &ctx).abs() < 1e-9);
        prop_assert!(m2 > 0.0);
    }

    #[test]
    fn discrete_gaussian_is_normalized_and_centred(ell in 2.0f64..15.0, mu in 0.0f64..1.0) {
        let dist = discrete_gaussian(mu, ell, None).unwrap();
        prop_assert!((dist.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(dist.probs.iter().all(|&p| p >= 0.0));
        prop_assert!(dg_moment(&dist, 1).abs() < 1e-12);
    }

    #[test]
    fn green_is_symmetric_and_positive(ell in 2.0f64..12.0, a in interior(), b in interior()) {
        let geom = CylinderGeometry::new(ell).unwrap();
        let z1 = C::new(a.0 * ell, a.1 * PI);
        let z2 = C::new(b.0 * ell, b.1 * PI);
        prop_assume!((z1 - z2).norm() > 1e-3);
        let g12 = green(z1, z2, &geom).unwrap();
        let g21 = green(z2, z1, &geom).unwrap();
        prop_assert!((g12 - g21).abs() < 1e-10 * g12.abs().max(1.0));
        prop_assert!(g12 > 0.0);
    }
}
