//! Closed-form roots and curve fits on synthetic, noise-free inputs.

use proptest::prelude::*;

use cp_threshold::error_model::CovarianceMode;
use cp_threshold::threshold::{
    critical_rho_segments, critical_rho_waveguides, fit_bilinear_curve, fit_polynomial_curve, scaling_fit,
    SeriesCoefficients, Verdict,
};

proptest! {
    #[test]
    fn segments_root_zeroes_prediction(b_phy in -100.0..-1.0f64, b_cp in -200.0..-1.0f64, c_cp in 1.0..200.0f64) {
        let c = SeriesCoefficients::exact(CovarianceMode::Segments, b_phy, 0.0, b_cp, c_cp);
        let r = critical_rho_segments(&c).unwrap();
        prop_assert!(c.predicted_diff(0.005, r.rho_c, 1.0).abs() < 1e-12);
        let expected = if r.rho_c < 0.0 {
            Verdict::BelowRange
        } else if r.rho_c > 1.0 {
            Verdict::AboveRange
        } else {
            Verdict::Crossing
        };
        prop_assert_eq!(r.verdict, expected);
        prop_assert_eq!(r.half_width(), 0.0);
    }

    #[test]
    fn waveguides_root_zeroes_prediction(b_phy in -100.0..-1.0f64, c_phy in -50.0..50.0f64,
                                         b_cp in -200.0..-1.0f64, c_cp in 1.0..200.0f64) {
        prop_assume!((c_cp - c_phy).abs() > 1e-3);
        let c = SeriesCoefficients::exact(CovarianceMode::Waveguides, b_phy, c_phy, b_cp, c_cp);
        match critical_rho_waveguides(&c) {
            Ok(r) => prop_assert!(c.predicted_diff(0.005, 1.0, r.rho_c).abs() < 1e-12),
            Err(_) => prop_assert!(c_cp - c_phy <= 0.0),
        }
    }

    #[test]
    fn bilinear_fit_recovers_curve(b in -1.0..1.0f64, cc in -1.0..1.0f64, d in 0.5..2.0f64, e in 0.0..1.0f64) {
        let pts: Vec<(f64, f64)> = (0..9)
            .map(|k| {
                let rb = 0.85 + 0.15 * k as f64 / 8.0;
                (rb, -(b + cc * rb) / (d + e * rb))
            })
            .collect();
        let fit = fit_bilinear_curve(&pts).unwrap();
        prop_assert!(fit.max_residual < 1e-8, "{}", fit.max_residual);
        let norm = fit.coefficients.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        prop_assert!(fit.coefficients[3] >= 0.0);
    }

    #[test]
    fn power_law_is_recovered(a in 0.01..2.0f64) {
        let pts: Vec<(f64, f64)> = (3..=7).map(|n| (n as f64, a / n as f64)).collect();
        let fit = scaling_fit(&pts, 1.0).unwrap();
        prop_assert!((fit.a - a).abs() < 1e-12 * a);
        prop_assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }
}

#[test]
fn polynomial_fit_needs_two_spare_points() {
    let pts: Vec<(f64, f64)> = (0..4).map(|k| (k as f64, (k * k) as f64)).collect();
    assert!(fit_polynomial_curve(&pts, 3).is_err());
    let pts: Vec<(f64, f64)> = (0..5).map(|k| (k as f64, 1.0 + 2.0 * k as f64 - (k * k) as f64)).collect();
    let fit = fit_polynomial_curve(&pts, 2).unwrap();
    for (got, want) in fit.coefficients.iter().zip([1.0, 2.0, -1.0]) {
        assert!((got - want).abs() < 1e-10);
    }
}
