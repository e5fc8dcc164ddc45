use std::fs;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stokes-array")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn presets_are_listed() {
    let o = cli(&["presets"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for name in ["logistic-m1", "soliton-m2", "cubic-m1", "perturbed-logistic", "laplace:essential"] {
        assert!(s.contains(name), "{name} missing from\n{s}");
    }
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(cli(&["run", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--preset", "painleve-i"]).status.code(), Some(2));
    assert_eq!(cli(&["run", "--preset", "logistic-m1", "--stages", "bogus"]).status.code(), Some(2));
    assert_eq!(cli(&["run"]).status.code(), Some(2));
    assert_eq!(cli(&["integrate", "--preset", "logistic-m1"]).status.code(), Some(2));
}

#[test]
fn stage_failure_exits_with_its_code() {
    let dir = tempfile::tempdir().unwrap();
    let eq = dir.path().join("flat.eq");
    fs::write(&eq, "m = 1\ny^2: [1]\n").unwrap();
    let o = cli(&["run", "--eq", eq.to_str().unwrap(), "--stages", "normalize"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("\"failure\""));
}

#[test]
fn normalize_only_prints_the_record() {
    let o = cli(&["run", "--preset", "soliton-m2", "--stages", "normalize"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["normalization"]["m"], 2);
    assert!(v["scan"].is_null());
}

#[test]
fn run_writes_its_outputs_and_array_refits_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cli(&["run", "--preset", "logistic-m1", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "f0.csv", "series.csv", "pole_field.csv", "residuals.csv", "stages/config.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let first = fs::read(dir.path().join("report.json")).unwrap();
    let again = cli(&["run", "--preset", "logistic-m1", "--out", out, "--resume"]);
    assert!(again.status.success());
    assert_eq!(fs::read(dir.path().join("report.json")).unwrap(), first);

    let poles = dir.path().join("pole_field.csv");
    let o = cli(&["array", "--preset", "logistic-m1", "--fit", poles.to_str().unwrap(), "--stokes"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let s = &v["S_plus"]["s_plus"];
    let norm = s[0].as_f64().unwrap().hypot(s[1].as_f64().unwrap());
    assert!(norm < 1e-8, "{s}");
}

#[test]
fn integrate_hits_the_first_pole() {
    let o = cli(&["integrate", "--preset", "logistic-m1", "--from", "10", "--to", "3.1415926535i"]);
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("blow-up"), "{err}");
    assert!(stdout(&o).lines().count() > 10);
}

#[test]
fn laplace_demo_classifies_and_writes() {
    let o = cli(&["demo", "laplace", "essential"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let gamma = v["fit"]["model"]["Stretched"]["gamma"].as_f64().unwrap();
    assert!((gamma - 0.5).abs() < 0.01);

    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["demo", "laplace", "shifted-exponential", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("sample.csv")).unwrap();
    assert!(csv.starts_with("x,re,im,err\n") && csv.lines().count() > 5);
    assert!(dir.path().join("fit.json").is_file());
    assert_eq!(cli(&["demo", "laplace", "nope"]).status.code(), Some(2));
}
