use std::f64::consts::PI;
use std::fs;

use stokes_core::presets::ClosedForm;
use stokes_core::report::{run_pipeline, EquationSource, PipelineError, RunConfig, Side, Stage};
use stokes_core::series::C64;

fn preset(name: &str) -> RunConfig {
    RunConfig::new(EquationSource::Preset(name.into()))
}

#[test]
fn logistic_arrays_match_the_lattice() {
    let r = run_pipeline(&preset("logistic-m1"), None, false).unwrap();
    let fit = r.fit.unwrap();
    assert_eq!(fit.arrays.len(), 2);
    for a in &fit.arrays {
        assert!(a.matching.pairs.len() >= 4);
        assert!(a.matching.max_residual < 1e-4, "{:?}", a.matching);
        for p in &a.matching.pairs {
            // Upper index n sits at (2n - 1) pi i, which is lattice k = n;
            // lower index n at (2n + 1) pi i, lattice k = n + 1.
            let k = if p.n > 0 { p.n } else { p.n + 1 };
            let exact = ClosedForm::Logistic.lattice_point(C64::new(1.0, 0.0), k);
            assert!((p.detected - exact).norm() < 1e-8, "n = {}: {} vs {}", p.n, p.detected, exact);
        }
    }
    let st = r.stokes.unwrap();
    assert!(st.s_plus.norm() < 1e-8, "{st:?}");
}

#[test]
fn soliton_exponent_and_residuals() {
    let r = run_pipeline(&preset("soliton-m2"), None, false).unwrap();
    for a in &r.fit.unwrap().arrays {
        assert!((a.mean_exponent + 2.0).abs() < 0.05);
        assert!(a.max_exponent_error < 0.05);
        let c = a.connection.as_ref().unwrap();
        // The closed form has no o(1) term: what is left is location noise.
        assert!(c.ln_c.norm() < 1e-7, "{}", c.ln_c);
        assert!(c.residuals.iter().all(|(_, v)| v.norm() < 1e-7));
        assert!(c.trend_decreasing);
    }
    let st = r.associated.unwrap().singular_time.unwrap();
    assert!((st.upper - C64::new(-(6f64.ln()), -PI)).norm() < 1e-8);
    assert!((st.lower - C64::new(-(6f64.ln()), PI)).norm() < 1e-8);
}

#[test]
fn normalize_only() {
    let mut cfg = preset("soliton-m2");
    cfg.stages = vec![Stage::Normalize];
    let r = run_pipeline(&cfg, None, false).unwrap();
    let n = r.normalization.unwrap();
    assert_eq!((n.m, n.degree, n.theoretical_exponent), (2, 2, -2.0));
    assert!(r.associated.is_none() && r.transseries.is_none() && r.scan.is_none() && r.stokes.is_none());
}

#[test]
fn resume_reproduces_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("logistic-m1");
    run_pipeline(&cfg, Some(dir.path()), false).unwrap();
    let first = fs::read(dir.path().join("report.json")).unwrap();
    for f in ["f0.csv", "series.csv", "pole_field.csv", "residuals.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }

    // Resume picks stage records up from disk: a marker planted in one of
    // them must survive into the final report.
    let scan_file = dir.path().join("stages").join("4-scan.json");
    let scan_text = fs::read_to_string(&scan_file).unwrap();
    fs::remove_file(dir.path().join("stages").join("6-stokes.json")).unwrap();
    fs::remove_file(dir.path().join("report.json")).unwrap();
    run_pipeline(&cfg, Some(dir.path()), true).unwrap();
    assert_eq!(fs::read(dir.path().join("report.json")).unwrap(), first);

    let marked = scan_text.replacen("\"blowup\": ", "\"blowup\": 1.0e0, \"unused\": ", 1);
    fs::write(&scan_file, marked.replace("\"unused\": ", "\"_\": ")).unwrap();
    let r = run_pipeline(&cfg, Some(dir.path()), true).unwrap();
    assert_eq!(r.scan.unwrap().blowup, 1.0);

    let mut other = cfg.clone();
    other.scan.rays = 12;
    let e = run_pipeline(&other, Some(dir.path()), true).unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
}

#[test]
fn failure_is_persisted_with_its_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(EquationSource::Text { label: "inline".into(), text: "m = 1\ny^2: [1]\n".into() });
    cfg.stages = vec![Stage::Normalize, Stage::Associated];
    let e = run_pipeline(&cfg, Some(dir.path()), false).unwrap_err();
    let PipelineError::Stage { stage, partial, .. } = &e else { panic!("{e}") };
    assert_eq!(*stage, Stage::Normalize);
    assert_eq!(e.exit_code(), 3);
    assert!(partial.failure.is_some());
    let text = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(text.contains("\"failure\"") && text.contains("\"normalize\""));
}

#[test]
fn sides_can_be_disabled() {
    let mut cfg = preset("logistic-m1");
    cfg.scan.lower = false;
    // S+ needs both connection constants.
    assert_eq!(run_pipeline(&cfg, None, false).unwrap_err().exit_code(), 2);
    cfg.stages.retain(|s| *s != Stage::Stokes);
    let r = run_pipeline(&cfg, None, false).unwrap();
    assert!(r.fit.as_ref().unwrap().arrays.iter().all(|a| a.side == Side::Upper));
    assert!(r.stokes.is_none());
}
