use std::f64::consts::PI;

use proptest::prelude::*;
use stokes_core::laplace::{
    decay_rate_fit, geometric_grid, inverse_laplace_contour, laplace_quadrature, laplace_quadrature_with,
    laplace_sample, rational_pair, DecayModel,
};
use stokes_core::predictor::{
    assign_index, detected_array, fit_connection_constant, match_arrays, predict_array, stokes_constant, FitOptions,
    SideFit, MATCH_WINDOW,
};
use stokes_core::report::to_canonical_json;
use stokes_core::series::C64;

fn xi_strategy() -> impl Strategy<Value = C64> {
    (0.2f64..8.0, -PI + 0.05..PI - 0.05).prop_map(|(r, t)| C64::from_polar(r, t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn index_covariance(alpha in -1.0f64..1.0, lc_re in -2.0f64..2.0, lc_im in -0.5f64..0.5,
                        xi in xi_strategy(), d_re in -1.0f64..1.0, d_im in -0.5f64..0.5) {
        let ln_c = C64::new(lc_re, lc_im);
        let a = C64::new(alpha, 0.0);
        let shift = C64::new(d_re, d_im);
        let mut arr = predict_array(a, ln_c, xi, 1..=8).unwrap();
        let base = fit_connection_constant(&arr, a, xi, &FitOptions::default()).unwrap();
        for e in &mut arr.entries {
            e.x += shift;
        }
        let moved = fit_connection_constant(&arr, a, xi, &FitOptions::default()).unwrap();
        prop_assert!((moved.ln_c - base.ln_c - shift).norm() < 1e-11);
        prop_assert!((base.ln_c - ln_c).norm() < 1e-11);
    }

    #[test]
    fn indices_are_recovered(alpha in -1.0f64..1.0, lc_re in -2.0f64..2.0, lc_im in -1.0f64..1.0,
                             xi in xi_strategy(), n in 1i64..60, lower in any::<bool>()) {
        let n = if lower { -n } else { n };
        let a = C64::new(alpha, 0.0);
        let arr = predict_array(a, C64::new(lc_re, lc_im), xi, [n]).unwrap();
        prop_assert_eq!(assign_index(arr.entries[0].x, a, xi), n);
    }

    #[test]
    fn quasiperiod_without_log(lc_re in -2.0f64..2.0, xi in xi_strategy()) {
        let arr = predict_array(C64::new(0.0, 0.0), C64::new(lc_re, 0.0), xi, 1..=10).unwrap();
        for w in arr.entries.windows(2) {
            prop_assert!((w[1].x - w[0].x - C64::new(0.0, 2.0 * PI)).norm() < 1e-12);
        }
    }

    #[test]
    fn self_matching_is_exact(alpha in -1.0f64..1.0, xi in xi_strategy()) {
        let a = C64::new(alpha, 0.0);
        let arr = predict_array(a, C64::new(0.0, 0.0), xi, 1..=6).unwrap();
        let pts: Vec<C64> = arr.entries.iter().map(|e| e.x).collect();
        let m = match_arrays(&arr, &pts, MATCH_WINDOW);
        prop_assert_eq!(m.pairs.len(), 6);
        prop_assert!(m.unmatched_predicted.is_empty() && m.unmatched_detected.is_empty());
        prop_assert_eq!(m.max_residual, 0.0);
        let det = detected_array(&pts, a, xi);
        prop_assert_eq!(det.entries.iter().map(|e| e.n).collect::<Vec<_>>(), (1..=6).collect::<Vec<_>>());
    }

    #[test]
    fn stokes_is_a_difference(a in -3.0f64..3.0, b in -3.0f64..3.0, t in -3.0f64..3.0) {
        let p = SideFit { ln_c: C64::new(a, t), sigma: 0.0 };
        let m = SideFit { ln_c: C64::new(b, -t), sigma: 0.0 };
        let s = stokes_constant(Some(p), Some(m));
        prop_assert!((s.s_plus - (C64::new(a, t).exp() - C64::new(b, -t).exp())).norm() < 1e-12 * (1.0 + s.c_plus.norm()));
        let one = stokes_constant(Some(p), None);
        prop_assert_eq!(one.s_plus, one.c_plus);
    }

    #[test]
    fn canonical_floats_round_trip(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let text = to_canonical_json(&vec![v]);
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back[0].to_bits(), v.to_bits());
        prop_assert_eq!(to_canonical_json(&back), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn laplace_of_exponential(b in 0.1f64..3.0, x in 0.5f64..10.0) {
        let v = laplace_quadrature(&|p: f64| C64::new((-b * p).exp(), 0.0), x, 1e-12).unwrap();
        prop_assert!((v.value.re - 1.0 / (x + b)).abs() < 1e-10, "{:?}", v);
    }

    #[test]
    fn bromwich_recovers_the_density(p in 0.2f64..10.0, c in 0.0f64..1.0) {
        let (f, g) = rational_pair(c);
        let v = inverse_laplace_contour(&f, &g, c, p, 1e-9).unwrap();
        prop_assert!((v.value - C64::new(p * (-p).exp(), 0.0)).norm() < 1e-8, "{:?}", v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Support starting at `a` forces decay at rate `a` and no faster.
    #[test]
    fn support_sets_the_decay_rate(a in 0.5f64..3.0) {
        let f = move |p: f64| if p >= a { C64::new((a - p).exp(), 0.0) } else { C64::new(0.0, 0.0) };
        let grid = geometric_grid(1.0, 40.0 / a, 16);
        let sample = laplace_sample(&f, &[a], &grid, 1e-300).unwrap();
        for (x, v) in grid.iter().zip(&sample.values) {
            let exact = (-a * x).exp() / (x + 1.0);
            prop_assert!((v.re / exact - 1.0).abs() < 1e-8);
        }
        let fit = decay_rate_fit(&sample).unwrap();
        let DecayModel::Exponential { rate } = fit.model else { return Err(TestCaseError::fail(format!("{fit:?}"))) };
        prop_assert!((rate / a - 1.0).abs() < 0.02, "rate {} for a = {}", rate, a);
    }
}

#[test]
fn knots_do_not_change_smooth_transforms() {
    let f = |p: f64| C64::new((-p * p).exp(), 0.0);
    let a = laplace_quadrature(&f, 2.0, 1e-12).unwrap();
    let b = laplace_quadrature_with(&f, 2.0, &[0.5, 1.5], 1e-12).unwrap();
    assert!((a.value - b.value).norm() < 1e-12);
}
