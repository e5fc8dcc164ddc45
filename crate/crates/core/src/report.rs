//! The full run: normalize, profile `F0`, build initial data, predict arrays,
//! scan for singularities, fit connection constants, and assemble the Stokes
//! report. Stage records are persisted as they complete so a failed or
//! interrupted run can resume.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::associated::{
    f0_residual, f0_series, potential, profile_path, singular_time_j_integral, AssociatedSign, JOptions,
};
use crate::eqmodel::{format_equation, normalize, parse_equation, NormalizedEquation};
use crate::integrator::{InitialData, IntegrateOptions, RefineOptions, SingularityHit};
use crate::locate::{locate_xi_singularity, LocateOptions, SingularityEstimate};
use crate::path::PathSpec;
use crate::predictor::{
    fit_connection_constant, match_arrays, predict_array, stokes_constant, ArrayEntry, ArraySource, ConnectionFit,
    FitOptions, MatchReport, SideFit, SingularityArray, StokesReport, MATCH_WINDOW,
};
use crate::presets::load_preset;
use crate::scan::{home_targets, scan_sector, HomingOptions, RayReport, SectorScan};
use crate::series::{C64, ONE, ZERO};
use crate::transseries::{evaluate_derivatives, formal_series, ode_residual, write_series_csv, TransseriesParams};

pub const SCHEMA: &str = "stokes-array/report/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Normalize,
    Associated,
    Transseries,
    Predict,
    Scan,
    Fit,
    Stokes,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Normalize, Stage::Associated, Stage::Transseries, Stage::Predict, Stage::Scan, Stage::Fit, Stage::Stokes];

    pub fn index(self) -> usize {
        Stage::ALL.iter().position(|s| *s == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Normalize => "normalize",
            Stage::Associated => "associated",
            Stage::Transseries => "transseries",
            Stage::Predict => "predict",
            Stage::Scan => "scan",
            Stage::Fit => "fit",
            Stage::Stokes => "stokes",
        }
    }

    /// Process exit code for a failure in this stage.
    pub fn exit_code(self) -> i32 {
        3 + self.index() as i32
    }
}

impl FromStr for Stage {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| ConfigError::UnknownStage(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
    #[error("stage {stage} needs stage {missing}")]
    MissingDependency { stage: &'static str, missing: &'static str },
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("equation: {0}")]
    Equation(String),
    #[error("{0}")]
    Incompatible(&'static str),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquationSource {
    Preset(String),
    /// Config text with a label (usually the file it came from).
    Text { label: String, text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub integrate: f64,
    pub f0_order: usize,
    pub series_order: usize,
    pub levels: usize,
    pub match_window: f64,
    pub trend: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { integrate: 1e-11, f0_order: 40, series_order: 12, levels: 4, match_window: MATCH_WINDOW, trend: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub rays: usize,
    pub r_max: f64,
    /// Angular margin added around the predicted points of each side.
    pub pad: f64,
    pub upper: bool,
    pub lower: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { rays: 80, r_max: 30.0, pad: 0.35, upper: true, lower: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub equation: EquationSource,
    pub stages: Vec<Stage>,
    /// Connection constant of the initial data.
    pub c: C64,
    /// Real starting point of every integration.
    pub x0: f64,
    pub tolerances: Tolerances,
    pub scan: ScanConfig,
    /// Recorded for reproducibility; the pipeline draws no random numbers.
    pub seed: u64,
}

impl RunConfig {
    pub fn new(equation: EquationSource) -> Self {
        Self {
            equation,
            stages: Stage::ALL.to_vec(),
            c: ONE,
            x0: 10.0,
            tolerances: Tolerances::default(),
            scan: ScanConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.tolerances;
        for (v, name) in [
            (t.integrate, "integration tolerance"),
            (t.match_window, "match window"),
            (t.trend, "trend tolerance"),
            (self.x0, "x0"),
            (self.scan.r_max, "r_max"),
        ] {
            if v.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if self.scan.rays == 0 {
            return Err(ConfigError::NotPositive("ray count"));
        }
        if self.c == ZERO {
            return Err(ConfigError::NotPositive("|C|"));
        }
        if !self.scan.upper && !self.scan.lower {
            return Err(ConfigError::Incompatible("at least one half plane must be scanned"));
        }
        if self.wants(Stage::Stokes) && !(self.scan.upper && self.scan.lower) {
            return Err(ConfigError::Incompatible("the stokes stage needs both half planes scanned"));
        }
        for &s in &self.stages {
            for dep in Stage::ALL.iter().take(s.index()) {
                if !self.stages.contains(dep) {
                    return Err(ConfigError::MissingDependency { stage: s.name(), missing: dep.name() });
                }
            }
        }
        Ok(())
    }

    fn wants(&self, s: Stage) -> bool {
        self.stages.contains(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub equation: NormalizedEquation,
    pub text: String,
    pub m: u8,
    pub degree: usize,
    pub lambda: C64,
    pub alpha: C64,
    /// `m / (1 - N)`.
    pub theoretical_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularTime {
    pub upper: C64,
    pub lower: C64,
    pub error: f64,
    /// Distance of each from `-ln xi_s` modulo `2 pi i`.
    pub mismatch: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociatedRecord {
    pub order: usize,
    pub coeffs: Vec<C64>,
    pub max_residual: f64,
    pub singularity: SingularityEstimate,
    /// Only for second-order equations.
    pub singular_time: Option<SingularTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransseriesRecord {
    pub params: TransseriesParams,
    pub order: usize,
    pub init: InitialData,
    /// `|y^(m) - A(1/x, y)|` of the truncated sum at `x0`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedArray {
    pub side: Side,
    pub array: SingularityArray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRecord {
    pub arrays: Vec<PredictedArray>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideScan {
    pub side: Side,
    pub theta1: f64,
    pub theta2: f64,
    pub r_min: f64,
    pub hits: Vec<SingularityHit>,
    /// Distance each hit moved when re-homed from `x0`; `None` if re-homing
    /// failed and the scan location was kept.
    pub polish_shift: Vec<Option<f64>>,
    pub rays: Vec<RayReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub blowup: f64,
    pub sides: Vec<SideScan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayFit {
    pub side: Side,
    pub xi_s: C64,
    pub matching: MatchReport,
    /// `None` with fewer than three matched points.
    pub connection: Option<ConnectionFit>,
    /// `|x_{n+1} - x_n - 2 pi i|` (mirrored for the lower side), by `n`.
    pub quasiperiodicity: Vec<(i64, f64)>,
    pub mean_exponent: f64,
    pub max_exponent_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub arrays: Vec<ArrayFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub config: RunConfig,
    pub normalization: Option<NormalizationRecord>,
    pub associated: Option<AssociatedRecord>,
    pub transseries: Option<TransseriesRecord>,
    pub predict: Option<PredictRecord>,
    pub scan: Option<ScanRecord>,
    pub fit: Option<FitRecord>,
    pub stokes: Option<StokesReport>,
    pub failure: Option<StageFailure>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("stage {}: {message}", stage.name())]
    Stage { stage: Stage, message: String, partial: Box<RunReport> },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { stage, .. } => stage.exit_code(),
        }
    }
}

/// Replace every non-integer number by its 17-significant-digit lowercase
/// scientific form, so identical values always print identically.
fn canonical(v: Value) -> Value {
    match v {
        Value::Number(n) if !(n.is_u64() || n.is_i64()) => match n.as_f64() {
            Some(x) => Value::Number(serde_json::Number::from_str(&format!("{x:.16e}")).expect("valid number")),
            None => Value::Number(n),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(canonical).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonical(v))).collect()),
        other => other,
    }
}

/// Deterministic JSON text of any record.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("records serialize");
    let mut s = serde_json::to_string_pretty(&canonical(v)).expect("values print");
    s.push('\n');
    s
}

struct Store {
    dir: Option<PathBuf>,
    resume: bool,
}

impl Store {
    fn stage_path(&self, s: Stage) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("stages").join(format!("{}-{}.json", s.index(), s.name())))
    }

    fn load<T: DeserializeOwned>(&self, s: Stage) -> Option<T> {
        if !self.resume {
            return None;
        }
        let text = fs::read_to_string(self.stage_path(s)?).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn save<T: Serialize>(&self, s: Stage, value: &T) -> Result<(), ConfigError> {
        let Some(p) = self.stage_path(s) else { return Ok(()) };
        write_file(&p, &to_canonical_json(value))
    }
}

fn write_file(p: &Path, text: &str) -> Result<(), ConfigError> {
    if let Some(parent) = p.parent() {
        fs::create_dir_all(parent).map_err(|e| ConfigError::Io(format!("{}: {e}", parent.display())))?;
    }
    fs::write(p, text).map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))
}

pub fn equation_text(src: &EquationSource) -> Result<String, ConfigError> {
    match src {
        EquationSource::Preset(name) => {
            let p = load_preset(name).map_err(|e| ConfigError::Equation(e.to_string()))?;
            p.config.ok_or_else(|| ConfigError::Equation(format!("preset {name:?} is a stub; supply --eq")))
        }
        EquationSource::Text { text, .. } => Ok(text.clone()),
    }
}

/// Parse and normalize equation config text.
pub fn normalize_stage(text: &str) -> Result<NormalizationRecord, String> {
    let spec = parse_equation(text).map_err(|e| e.to_string())?;
    let eq = normalize(&spec).map_err(|e| e.to_string())?;
    Ok(NormalizationRecord {
        text: format_equation(&eq.spec),
        m: eq.m(),
        degree: eq.degree(),
        lambda: eq.lambda,
        alpha: eq.alpha,
        theoretical_exponent: eq.theoretical_exponent(),
        equation: eq,
    })
}

/// `|a - b|` after removing the nearest multiple of `2 pi i` from `a - b`.
fn mod_2pi_i(a: C64, b: C64) -> f64 {
    let d = a - b;
    let k = (d.im / (2.0 * PI)).round();
    (d - C64::new(0.0, 2.0 * PI * k)).norm()
}

/// `F0` coefficients, its located singularity and, for `m = 2`, the singular time.
pub fn associated_stage(eq: &NormalizedEquation, cfg: &RunConfig) -> Result<AssociatedRecord, String> {
    let order = cfg.tolerances.f0_order;
    let sol = f0_series(eq, order, AssociatedSign::Consistent).map_err(|e| e.to_string())?;
    let max_residual = f0_residual(eq, &sol).iter().map(|r| r.norm()).fold(0.0, f64::max);
    let singularity = locate_xi_singularity(&sol, &LocateOptions::default()).map_err(|e| e.to_string())?;
    let singular_time = if eq.m() == 2 {
        let pot = potential(eq).map_err(|e| e.to_string())?;
        let xi0 = C64::new((-10f64).exp(), 0.0);
        let g0 = sol.eval(xi0);
        let run = |upper: bool| {
            let nodes = profile_path(&sol, xi0, singularity.xi_s, upper, 0.5);
            let path = PathSpec::new(nodes, 0.25 * g0.norm()).map_err(|e| e.to_string())?;
            singular_time_j_integral(&pot, C64::new(10.0, 0.0), g0, &path, &JOptions::default()).map_err(|e| e.to_string())
        };
        let (up, down) = (run(true)?, run(false)?);
        let target = -singularity.xi_s.ln();
        Some(SingularTime {
            upper: up.t_s,
            lower: down.t_s,
            error: up.error.max(down.error),
            mismatch: (mod_2pi_i(up.t_s, target), mod_2pi_i(down.t_s, target)),
        })
    } else {
        None
    };
    Ok(AssociatedRecord { order, coeffs: sol.coeffs, max_residual, singularity, singular_time })
}

/// Initial data at `x0` from the truncated transseries.
pub fn transseries_stage(eq: &NormalizedEquation, cfg: &RunConfig) -> Result<TransseriesRecord, String> {
    let t = &cfg.tolerances;
    let series = formal_series(eq, t.levels, t.series_order).map_err(|e| e.to_string())?;
    let params = TransseriesParams::new(cfg.c, t.levels);
    let x0 = C64::new(cfg.x0, 0.0);
    let d = evaluate_derivatives(eq, &series, &params, x0).map_err(|e| e.to_string())?;
    let residual = ode_residual(eq, &series, &params, x0).map_err(|e| e.to_string())?.norm();
    Ok(TransseriesRecord { params, order: t.series_order, init: InitialData { x0, y0: d[0], dy0: d[1] }, residual })
}

fn predict_stage(
    norm: &NormalizationRecord,
    assoc: &AssociatedRecord,
    cfg: &RunConfig,
) -> Result<PredictRecord, String> {
    let alpha = norm.alpha;
    let ln_c = cfg.c.ln();
    let mut arrays = Vec::new();
    let mut candidates = assoc.singularity.candidates.clone();
    if candidates.is_empty() {
        candidates.push(assoc.singularity.xi_s);
    }
    for &xi_s in &candidates {
        for (side, sign, wanted) in [(Side::Upper, 1i64, cfg.scan.upper), (Side::Lower, -1i64, cfg.scan.lower)] {
            if !wanted {
                continue;
            }
            let mut ns = Vec::new();
            for k in 1..=1000i64 {
                let n = sign * k;
                let probe = predict_array(alpha, ln_c, xi_s, [n]).map_err(|e| e.to_string())?;
                let x = probe.entries[0].x;
                if x.norm() > cfg.scan.r_max - 1.0 {
                    break;
                }
                // Keep points on their own side of the real axis.
                if (x.im > 0.0) == (sign > 0) {
                    ns.push(n);
                }
            }
            let array = predict_array(alpha, ln_c, xi_s, ns).map_err(|e| e.to_string())?;
            arrays.push(PredictedArray { side, array });
        }
    }
    Ok(PredictRecord { arrays })
}

/// Re-homed locations further than this from the scan hit are rejected.
const POLISH_RADIUS: f64 = 1e-2;

fn scan_stage(
    norm: &NormalizationRecord,
    ts: &TransseriesRecord,
    pred: &PredictRecord,
    cfg: &RunConfig,
) -> Result<ScanRecord, String> {
    let eq = &norm.equation;
    let p = norm.theoretical_exponent;
    let mut iopts = IntegrateOptions::for_exponent(p);
    iopts.tol = cfg.tolerances.integrate;
    let mut sides = Vec::new();
    for side in [Side::Upper, Side::Lower] {
        let pts: Vec<C64> =
            pred.arrays.iter().filter(|a| a.side == side).flat_map(|a| a.array.entries.iter().map(|e| e.x)).collect();
        if pts.is_empty() {
            continue;
        }
        let args: Vec<f64> = pts.iter().map(|x| x.arg()).collect();
        let lo = args.iter().copied().fold(f64::INFINITY, f64::min) - cfg.scan.pad;
        let hi = args.iter().copied().fold(f64::NEG_INFINITY, f64::max) + cfg.scan.pad;
        let (theta1, theta2) = match side {
            Side::Upper => (lo.max(0.05), hi.min(PI - 0.05)),
            Side::Lower => (lo.max(-PI + 0.05), hi.min(-0.05)),
        };
        let nearest = pts.iter().map(|x| x.norm()).fold(f64::INFINITY, f64::min);
        let mut sc = SectorScan::for_exponent(theta1, theta2, cfg.scan.rays, p);
        sc.r_max = cfg.scan.r_max;
        sc.r_min = sc.r_min.min(0.5 * nearest);
        let r = scan_sector(eq, &ts.init, &sc, &iopts, &RefineOptions::default(), &HomingOptions::default())
            .map_err(|e| e.to_string())?;
        let mut hits: Vec<SingularityHit> =
            r.hits.into_iter().filter(|h| (h.x_s.im > 0.0) == (side == Side::Upper)).collect();
        // A ray that detoured around earlier poles carries their integration
        // error; a fresh straight approach from x0 does not.
        let targets: Vec<C64> = hits.iter().map(|h| h.x_s).collect();
        let hopts = HomingOptions::default();
        let homed = home_targets(eq, &ts.init, &targets, &iopts, &RefineOptions::default(), &hopts);
        let mut polish_shift = Vec::with_capacity(hits.len());
        for (h, res) in hits.iter_mut().zip(homed) {
            match res {
                Ok(r) if (r.hit.x_s - h.x_s).norm() < POLISH_RADIUS => {
                    polish_shift.push(Some((r.hit.x_s - h.x_s).norm()));
                    *h = SingularityHit { trace_id: h.trace_id, ..r.hit };
                }
                _ => polish_shift.push(None),
            }
        }
        sides.push(SideScan { side, theta1, theta2, r_min: sc.r_min, hits, polish_shift, rays: r.rays });
    }
    Ok(ScanRecord { blowup: iopts.blowup, sides })
}

fn fit_stage(norm: &NormalizationRecord, pred: &PredictRecord, scan: &ScanRecord, cfg: &RunConfig) -> Result<FitRecord, String> {
    let mut arrays = Vec::new();
    for pa in &pred.arrays {
        let Some(ss) = scan.sides.iter().find(|s| s.side == pa.side) else { continue };
        let detected: Vec<C64> = ss.hits.iter().map(|h| h.x_s).collect();
        let matching = match_arrays(&pa.array, &detected, cfg.tolerances.match_window);
        let entries: Vec<ArrayEntry> = matching.pairs.iter().map(|p| ArrayEntry { n: p.n, x: p.detected }).collect();
        let det = SingularityArray {
            entries: entries.clone(),
            source: ArraySource::Detected,
            params: pa.array.params,
            branch: pa.array.branch.clone(),
        };
        let xi_s = pa.array.params.xi_s;
        let connection = if entries.len() >= 3 {
            Some(
                fit_connection_constant(&det, norm.alpha, xi_s, &FitOptions { trend_tol: cfg.tolerances.trend })
                    .map_err(|e| format!("{:?} array of xi_s = {xi_s}: {e}", pa.side))?,
            )
        } else {
            None
        };
        let step = match pa.side {
            Side::Upper => 1,
            Side::Lower => -1,
        };
        let mut quasiperiodicity = Vec::new();
        for w in entries.windows(2) {
            let (a, b) = if step > 0 { (w[0], w[1]) } else { (w[1], w[0]) };
            if b.n == a.n + step {
                quasiperiodicity.push((a.n, (b.x - a.x - C64::new(0.0, 2.0 * PI * step as f64)).norm()));
            }
        }
        let exps: Vec<f64> = matching
            .pairs
            .iter()
            .filter_map(|p| ss.hits.iter().find(|h| h.x_s == p.detected).map(|h| h.exponent))
            .collect();
        let mean_exponent = if exps.is_empty() { f64::NAN } else { exps.iter().sum::<f64>() / exps.len() as f64 };
        let max_exponent_error =
            exps.iter().map(|e| (e - norm.theoretical_exponent).abs()).fold(0.0, f64::max);
        arrays.push(ArrayFit { side: pa.side, xi_s, matching, connection, quasiperiodicity, mean_exponent, max_exponent_error });
    }
    if !arrays.is_empty() && arrays.iter().all(|a| a.connection.is_none() && !a.matching.pairs.is_empty()) {
        return Err("no array had the three matched points a connection fit needs".to_string());
    }
    Ok(FitRecord { arrays })
}

/// A side with no detected singularities has `C = 0`; a side with
/// singularities but no connection fit leaves `S+` undetermined.
fn stokes_stage(assoc: &AssociatedRecord, scan: &ScanRecord, fit: &FitRecord) -> Result<StokesReport, String> {
    let xi_s = assoc.singularity.xi_s;
    let side = |s: Side| -> Result<Option<SideFit>, String> {
        let found = scan.sides.iter().find(|x| x.side == s).is_some_and(|x| !x.hits.is_empty());
        if !found {
            return Ok(None);
        }
        fit.arrays
            .iter()
            .find(|a| a.side == s && a.xi_s == xi_s)
            .and_then(|a| a.connection.as_ref())
            .map(|c| Some(SideFit { ln_c: c.ln_c, sigma: c.sigma }))
            .ok_or_else(|| format!("{s:?} half plane has singularities but no connection fit"))
    };
    Ok(stokes_constant(side(Side::Upper)?, side(Side::Lower)?))
}

fn write_sidecars(dir: &Path, report: &RunReport) -> Result<(), ConfigError> {
    if let Some(a) = &report.associated {
        let mut s = String::from("n,re,im\n");
        for (n, c) in a.coeffs.iter().enumerate() {
            s += &format!("{n},{:.16e},{:.16e}\n", c.re, c.im);
        }
        write_file(&dir.join("f0.csv"), &s)?;
    }
    if let (Some(n), Some(t)) = (&report.normalization, &report.transseries) {
        if let Ok(series) = formal_series(&n.equation, t.params.levels, t.order) {
            let mut buf = Vec::new();
            write_series_csv(&mut buf, &series).map_err(|e| ConfigError::Io(e.to_string()))?;
            write_file(&dir.join("series.csv"), &String::from_utf8_lossy(&buf))?;
        }
    }
    if let Some(sc) = &report.scan {
        let mut s = String::from("side,x_re,x_im,exponent,exponent_from_ratio,fit_residual,refine_radius\n");
        for side in &sc.sides {
            for h in &side.hits {
                s += &format!(
                    "{:?},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                    side.side, h.x_s.re, h.x_s.im, h.exponent, h.exponent_from_ratio, h.fit_residual, h.refine_radius
                );
            }
        }
        write_file(&dir.join("pole_field.csv"), &s.to_lowercase())?;
    }
    if let Some(f) = &report.fit {
        let mut s = String::from("side,xi_re,xi_im,n,residual_re,residual_im,quasiperiodicity\n");
        for a in &f.arrays {
            let Some(c) = &a.connection else { continue };
            for (n, r) in &c.residuals {
                let q = a.quasiperiodicity.iter().find(|(k, _)| k == n).map_or(String::new(), |(_, v)| format!("{v:.16e}"));
                s += &format!(
                    "{},{:.16e},{:.16e},{n},{:.16e},{:.16e},{q}\n",
                    format!("{:?}", a.side).to_lowercase(),
                    a.xi_s.re,
                    a.xi_s.im,
                    r.re,
                    r.im
                );
            }
        }
        write_file(&dir.join("residuals.csv"), &s)?;
    }
    Ok(())
}

/// Run the stages named in `cfg` in dependency order. With `out_dir`, every
/// completed stage is written to `out_dir/stages/` and the final report to
/// `out_dir/report.json` with CSV sidecars; `resume` reuses stage files left by
/// an earlier run of the same config.
pub fn run_pipeline(cfg: &RunConfig, out_dir: Option<&Path>, resume: bool) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let store = Store { dir: out_dir.map(Path::to_path_buf), resume };
    if let Some(dir) = out_dir {
        let cfg_text = to_canonical_json(cfg);
        let cfg_path = dir.join("stages").join("config.json");
        if resume {
            if let Ok(old) = fs::read_to_string(&cfg_path) {
                if old != cfg_text {
                    return Err(ConfigError::Resume(format!("{} holds a different config", cfg_path.display())).into());
                }
            }
        } else if dir.join("stages").exists() {
            fs::remove_dir_all(dir.join("stages")).map_err(|e| ConfigError::Io(e.to_string()))?;
        }
        write_file(&cfg_path, &cfg_text)?;
    }
    let text = equation_text(&cfg.equation)?;

    let mut report = RunReport {
        schema: SCHEMA.to_string(),
        config: cfg.clone(),
        normalization: None,
        associated: None,
        transseries: None,
        predict: None,
        scan: None,
        fit: None,
        stokes: None,
        failure: None,
    };

    fn step<T: Serialize + DeserializeOwned>(
        store: &Store,
        stage: Stage,
        report: &mut RunReport,
        run: impl FnOnce() -> Result<T, String>,
    ) -> Result<T, PipelineError> {
        if let Some(v) = store.load::<T>(stage) {
            return Ok(v);
        }
        match run() {
            Ok(v) => {
                store.save(stage, &v)?;
                Ok(v)
            }
            Err(message) => {
                report.failure = Some(StageFailure { stage, message: message.clone() });
                Err(PipelineError::Stage { stage, message, partial: Box::new(report.clone()) })
            }
        }
    }

    let result = (|| -> Result<(), PipelineError> {
        if !cfg.wants(Stage::Normalize) {
            return Ok(());
        }
        let norm = step(&store, Stage::Normalize, &mut report, || normalize_stage(&text))?;
        report.normalization = Some(norm.clone());
        if !cfg.wants(Stage::Associated) {
            return Ok(());
        }
        let eq = norm.equation.clone();
        let assoc = step(&store, Stage::Associated, &mut report, || associated_stage(&eq, cfg))?;
        report.associated = Some(assoc.clone());
        if !cfg.wants(Stage::Transseries) {
            return Ok(());
        }
        let ts = step(&store, Stage::Transseries, &mut report, || transseries_stage(&eq, cfg))?;
        report.transseries = Some(ts.clone());
        if !cfg.wants(Stage::Predict) {
            return Ok(());
        }
        let pred = step(&store, Stage::Predict, &mut report, || predict_stage(&norm, &assoc, cfg))?;
        report.predict = Some(pred.clone());
        if !cfg.wants(Stage::Scan) {
            return Ok(());
        }
        let scan = step(&store, Stage::Scan, &mut report, || scan_stage(&norm, &ts, &pred, cfg))?;
        report.scan = Some(scan.clone());
        if !cfg.wants(Stage::Fit) {
            return Ok(());
        }
        let fit = step(&store, Stage::Fit, &mut report, || fit_stage(&norm, &pred, &scan, cfg))?;
        report.fit = Some(fit.clone());
        if !cfg.wants(Stage::Stokes) {
            return Ok(());
        }
        let st = step(&store, Stage::Stokes, &mut report, || stokes_stage(&assoc, &scan, &fit))?;
        report.stokes = Some(st);
        Ok(())
    })();

    if let Some(dir) = out_dir {
        let final_report = match &result {
            Err(PipelineError::Stage { partial, .. }) => partial.as_ref(),
            _ => &report,
        };
        write_file(&dir.join("report.json"), &to_canonical_json(final_report))?;
        write_sidecars(dir, final_report)?;
    }
    result.map(|_| report)
}
