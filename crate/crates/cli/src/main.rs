use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use stokes_core::eqmodel::NormalizedEquation;
use stokes_core::integrator::{integrate_path, refine_singularity, InitialData, IntegrateOptions, RefineOptions, Termination};
use stokes_core::laplace::{decay_rate_fit, parse_grid, LaplacePreset};
use stokes_core::literal::{parse_complex, parse_complex_list};
use stokes_core::path::PathSpec;
use stokes_core::predictor::{
    detected_array, fit_connection_constant, predict_array, stokes_constant, FitOptions, SideFit,
};
use stokes_core::presets::{list_presets, load_preset};
use stokes_core::report::{
    associated_stage, equation_text, normalize_stage, run_pipeline, to_canonical_json, EquationSource,
    PipelineError, RunConfig, Stage,
};
use stokes_core::scan::{init_global_threads, parse_sector, scan_sector, HomingOptions};
use stokes_core::series::C64;
use stokes_core::transseries::{evaluate_derivatives, formal_series, write_series_csv, TransseriesParams};

/// Singularity arrays of decaying solutions of y^(m) = A(1/x, y).
#[derive(Parser)]
#[command(name = "stokes-array", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline and write a JSON report.
    Run(RunArgs),
    /// Integrate transseries initial data along a path, or scan a sector.
    Integrate(IntegrateArgs),
    /// Profile F0 and locate its singularity.
    Associated(AssociatedArgs),
    /// Dump the formal series of the transseries levels as CSV.
    Series(SeriesArgs),
    /// Predict a singularity array, or fit connection constants to detected points.
    Array(ArrayArgs),
    /// Demonstrations.
    #[command(subcommand)]
    Demo(Demo),
    /// List the built-in equation and Laplace presets.
    Presets,
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct EquationArgs {
    /// Equation config file.
    #[arg(long)]
    eq: Option<PathBuf>,
    /// Built-in equation preset.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    equation: EquationArgs,
    /// Comma-separated stages (default: all).
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<String>>,
    /// Output directory for the report, stage records and CSV sidecars.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse stage records left in --out by an earlier run of the same config.
    #[arg(long, requires = "out")]
    resume: bool,
    /// Connection constant of the initial data.
    #[arg(long, default_value = "1")]
    c: String,
    #[arg(long, default_value_t = 10.0)]
    x0: f64,
    #[arg(long, default_value_t = 80)]
    rays: usize,
    #[arg(long, default_value_t = 30.0)]
    r_max: f64,
    #[arg(long, default_value_t = 1e-11)]
    tol: f64,
    #[arg(long, default_value_t = 40)]
    f0_order: usize,
    #[arg(long, default_value_t = 12)]
    transseries_order: usize,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IntegrateArgs {
    #[command(flatten)]
    equation: EquationArgs,
    #[arg(long, default_value = "1")]
    c: String,
    /// Start point; initial data come from the transseries there.
    #[arg(long, default_value = "10")]
    from: String,
    /// End point of a straight path.
    #[arg(long, conflicts_with_all = ["path", "scan_sector"])]
    to: Option<String>,
    /// Polyline "a; b; c" of complex nodes starting at --from.
    #[arg(long, conflicts_with = "scan_sector")]
    path: Option<String>,
    /// Scan rays "theta1:theta2:count" instead of a single path.
    #[arg(long)]
    scan_sector: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    r_max: f64,
    #[arg(long, default_value_t = 1e-11)]
    tol: f64,
    /// Blow-up threshold; by default set from the singularity exponent.
    #[arg(long)]
    blowup: Option<f64>,
    #[arg(long, default_value_t = 12)]
    transseries_order: usize,
    #[arg(long, default_value_t = 4)]
    levels: usize,
}

#[derive(Args)]
struct AssociatedArgs {
    #[command(flatten)]
    equation: EquationArgs,
    #[arg(long, default_value_t = 40)]
    f0_order: usize,
}

#[derive(Args)]
struct SeriesArgs {
    #[command(flatten)]
    equation: EquationArgs,
    #[arg(long, default_value_t = 12)]
    transseries_order: usize,
    #[arg(long, default_value_t = 4)]
    levels: usize,
}

#[derive(Args)]
struct ArrayArgs {
    #[command(flatten)]
    equation: EquationArgs,
    /// Predict n = 1..N and -N..-1.
    #[arg(long, value_name = "N", conflicts_with = "fit")]
    predict: Option<i64>,
    /// Connection constant used for prediction.
    #[arg(long, default_value = "1")]
    c: String,
    /// CSV of detected points with columns x_re and x_im (e.g. pole_field.csv).
    #[arg(long, value_name = "FILE")]
    fit: Option<PathBuf>,
    /// With --fit: combine both half planes into S+.
    #[arg(long, requires = "fit")]
    stokes: bool,
    #[arg(long, default_value_t = 40)]
    f0_order: usize,
}

#[derive(Subcommand)]
enum Demo {
    /// Laplace transform of a preset density and its decay classification.
    Laplace {
        /// One of the Laplace presets (see `stokes-array presets`).
        preset: String,
        /// Geometric grid "x0:x1:n".
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = 1e-300)]
        tol: f64,
        /// Write sample.csv and fit.json here instead of printing JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Compute(String),
    Stage(i32, String),
}

fn config(e: impl Display) -> Failure {
    Failure::Config(e.to_string())
}

fn compute(e: impl Display) -> Failure {
    Failure::Compute(e.to_string())
}

fn source(eq: &EquationArgs) -> Result<EquationSource, Failure> {
    match (&eq.eq, &eq.preset) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| config(format!("{}: {e}", p.display())))?;
            Ok(EquationSource::Text { label: p.display().to_string(), text })
        }
        (None, Some(name)) => Ok(EquationSource::Preset(name.clone())),
        (None, None) => Err(config("need --eq or --preset")),
    }
}

fn equation(eq: &EquationArgs) -> Result<NormalizedEquation, Failure> {
    let text = equation_text(&source(eq)?).map_err(config)?;
    Ok(normalize_stage(&text).map_err(config)?.equation)
}

fn complex_arg(name: &str, text: &str) -> Result<C64, Failure> {
    parse_complex(text).map_err(|e| config(format!("--{name}: {e}")))
}

fn print_json<T: serde::Serialize>(v: &T) {
    print!("{}", to_canonical_json(v));
}

fn run(a: RunArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::new(source(&a.equation)?);
    if let Some(st) = &a.stages {
        cfg.stages = st.iter().map(|s| s.parse::<Stage>()).collect::<Result<_, _>>().map_err(config)?;
    }
    cfg.c = complex_arg("c", &a.c)?;
    cfg.x0 = a.x0;
    cfg.scan.rays = a.rays;
    cfg.scan.r_max = a.r_max;
    cfg.tolerances.integrate = a.tol;
    cfg.tolerances.f0_order = a.f0_order;
    cfg.tolerances.series_order = a.transseries_order;
    cfg.tolerances.levels = a.levels;
    cfg.seed = a.seed;
    match run_pipeline(&cfg, a.out.as_deref(), a.resume) {
        Ok(report) => {
            match &a.out {
                Some(dir) => {
                    println!("report: {}", dir.join("report.json").display());
                    if let Some(s) = &report.stokes {
                        println!("S+ = {:.6e} {:+.6e}i  (sigma {:.2e})", s.s_plus.re, s.s_plus.im, s.sigma);
                    }
                }
                None => print_json(&report),
            }
            Ok(())
        }
        Err(PipelineError::Config(e)) => Err(config(e)),
        Err(e @ PipelineError::Stage { .. }) => {
            if let (PipelineError::Stage { partial, .. }, None) = (&e, &a.out) {
                print_json(partial.as_ref());
            }
            Err(Failure::Stage(e.exit_code(), e.to_string()))
        }
    }
}

fn integrate(a: IntegrateArgs) -> Result<(), Failure> {
    let eq = equation(&a.equation)?;
    let c = complex_arg("c", &a.c)?;
    let from = complex_arg("from", &a.from)?;
    let series = formal_series(&eq, a.levels, a.transseries_order).map_err(compute)?;
    let d = evaluate_derivatives(&eq, &series, &TransseriesParams::new(c, a.levels), from).map_err(compute)?;
    let init = InitialData { x0: from, y0: d[0], dy0: d[1] };
    let p = eq.theoretical_exponent();
    let mut iopts = IntegrateOptions::for_exponent(p);
    iopts.tol = a.tol;
    if let Some(b) = a.blowup {
        iopts.blowup = b;
    }
    if let Some(text) = &a.scan_sector {
        let base = parse_sector(text).ok_or_else(|| config(format!("--scan-sector {text:?}: expected theta1:theta2:count")))?;
        let mut sc = stokes_core::scan::SectorScan::for_exponent(base.theta1, base.theta2, base.count, p);
        sc.r_max = a.r_max;
        let r = scan_sector(&eq, &init, &sc, &iopts, &RefineOptions::default(), &HomingOptions::default())
            .map_err(compute)?;
        print_json(&r);
        return Ok(());
    }
    let mut nodes = vec![from];
    match (&a.to, &a.path) {
        (Some(t), None) => nodes.push(complex_arg("to", t)?),
        (None, Some(p)) => {
            let rest = parse_complex_list(p).map_err(|e| config(format!("--path: {e}")))?;
            let skip = usize::from(rest.first() == Some(&from));
            nodes.extend(rest.into_iter().skip(skip));
        }
        _ => return Err(config("need one of --to, --path or --scan-sector")),
    }
    let path = PathSpec::new(nodes, 0.0).map_err(config)?;
    let trace = integrate_path(&eq, &init, &path, &iopts).map_err(compute)?;
    let mut out = std::io::stdout().lock();
    trace.write_csv(&mut out).map_err(compute)?;
    if trace.termination == Termination::Blowup {
        match refine_singularity(&trace, 0, &RefineOptions::default()) {
            Ok(h) => eprintln!("blow-up: x_s = {:.12e} {:+.12e}i, exponent {:.6}", h.x_s.re, h.x_s.im, h.exponent),
            Err(e) => eprintln!("blow-up near {}: {e}", trace.last_node()),
        }
    }
    Ok(())
}

fn associated(a: AssociatedArgs) -> Result<(), Failure> {
    let eq = equation(&a.equation)?;
    let mut cfg = RunConfig::new(EquationSource::Preset(String::new()));
    cfg.tolerances.f0_order = a.f0_order;
    let rec = associated_stage(&eq, &cfg).map_err(compute)?;
    print_json(&json!({
        "xi_s": rec.singularity.xi_s,
        "exponent": rec.singularity.exponent,
        "radius": rec.singularity.radius,
        "confidence": rec.singularity.confidence,
        "t_s": rec.singular_time,
        "coeffs": rec.coeffs,
        "max_residual": rec.max_residual,
    }));
    Ok(())
}

fn series(a: SeriesArgs) -> Result<(), Failure> {
    let eq = equation(&a.equation)?;
    let s = formal_series(&eq, a.levels, a.transseries_order).map_err(compute)?;
    write_series_csv(&mut std::io::stdout().lock(), &s).map_err(compute)
}

fn read_points(path: &Path) -> Result<Vec<C64>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(config)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| config(format!("{}: no {name} column", path.display())));
    let (ire, iim) = (col("x_re")?, col("x_im")?);
    let mut pts = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(config)?;
        let num = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| config(format!("{}: {e}", path.display())));
        pts.push(C64::new(num(ire)?, num(iim)?));
    }
    Ok(pts)
}

fn array(a: ArrayArgs) -> Result<(), Failure> {
    let eq = equation(&a.equation)?;
    let mut cfg = RunConfig::new(EquationSource::Preset(String::new()));
    cfg.tolerances.f0_order = a.f0_order;
    let xi_s = associated_stage(&eq, &cfg).map_err(compute)?.singularity.xi_s;
    let alpha = eq.alpha;
    if let Some(n) = a.predict {
        if n < 1 {
            return Err(config("--predict needs N >= 1"));
        }
        let ln_c = complex_arg("c", &a.c)?.ln();
        let ns = (-n..=n).filter(|k| *k != 0);
        let arr = predict_array(alpha, ln_c, xi_s, ns).map_err(compute)?;
        print_json(&json!({ "array": arr, "lnC": ln_c, "xi_s": xi_s }));
        return Ok(());
    }
    let Some(file) = &a.fit else { return Err(config("need --predict or --fit")) };
    let pts = read_points(file)?;
    let opts = FitOptions::default();
    let mut sides = Vec::new();
    let mut fits = [None, None];
    for (i, upper) in [true, false].into_iter().enumerate() {
        let side: Vec<C64> = pts.iter().copied().filter(|x| (x.im > 0.0) == upper).collect();
        if side.is_empty() {
            continue;
        }
        let det = detected_array(&side, alpha, xi_s);
        let fit = fit_connection_constant(&det, alpha, xi_s, &opts).map_err(compute)?;
        fits[i] = Some(SideFit { ln_c: fit.ln_c, sigma: fit.sigma });
        sides.push(json!({
            "side": if upper { "upper" } else { "lower" },
            "array": det,
            "lnC": fit.ln_c,
            "sigma": fit.sigma,
            "residuals": fit.residuals,
        }));
    }
    let s_plus = a.stokes.then(|| stokes_constant(fits[0], fits[1]));
    print_json(&json!({ "xi_s": xi_s, "fits": sides, "S_plus": s_plus }));
    Ok(())
}

fn demo(d: Demo) -> Result<(), Failure> {
    let Demo::Laplace { preset, grid, tol, out } = d;
    let p = LaplacePreset::by_name(&preset).map_err(config)?;
    let grid = match grid {
        Some(g) => parse_grid(&g).map_err(config)?,
        None => p.default_grid(),
    };
    let sample = p.sample(&grid, tol).map_err(compute)?;
    let fit = decay_rate_fit(&sample).map_err(compute)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(&dir).map_err(config)?;
            let mut csv = String::from("x,re,im,err\n");
            for i in 0..sample.grid.len() {
                let v = sample.values[i];
                csv += &format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", sample.grid[i], v.re, v.im, sample.errors[i]);
            }
            fs::write(dir.join("sample.csv"), csv).map_err(config)?;
            fs::write(dir.join("fit.json"), to_canonical_json(&json!({ "preset": p.name(), "fit": fit })))
                .map_err(config)?;
            println!("{}: {:?}", p.name(), fit.model);
        }
        None => print_json(&json!({ "preset": p.name(), "sample": sample, "fit": fit })),
    }
    Ok(())
}

fn presets() -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    for name in list_presets() {
        let p = load_preset(name).map_err(compute)?;
        let tag = if p.config.is_none() { " (stub)" } else { "" };
        writeln!(out, "{name}\t{}{tag}", p.description).map_err(compute)?;
    }
    for p in LaplacePreset::ALL {
        writeln!(out, "laplace:{}", p.name()).map_err(compute)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_global_threads();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Integrate(a) => integrate(a),
        Command::Associated(a) => associated(a),
        Command::Series(a) => series(a),
        Command::Array(a) => array(a),
        Command::Demo(d) => demo(d),
        Command::Presets => presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Stage(code, m)) => {
            eprintln!("error: {m}");
            ExitCode::from(code as u8)
        }
    }
}
