//! Adaptive integration of `y^(m) = A(1/x, y)` along polylines in the complex
//! plane, blow-up detection and local analysis of the singularities reached.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::eqmodel::NormalizedEquation;
use crate::path::PathSpec;
use crate::series::{self, C64, ONE, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    Blowup,
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub nodes: Vec<C64>,
    /// `[y, y']` at each node.
    pub values: Vec<[C64; 2]>,
    /// Step taken to reach each node (0 for the first).
    pub steps: Vec<f64>,
    /// Scaled local error estimate of that step.
    pub errors: Vec<f64>,
    /// Rejected attempts preceding each accepted step.
    pub rejections: Vec<u32>,
    pub termination: Termination,
}

impl Trace {
    pub fn last_value(&self) -> C64 {
        self.values.last().map_or(ZERO, |v| v[0])
    }

    pub fn last_node(&self) -> C64 {
        *self.nodes.last().expect("trace has a start node")
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "x_re,x_im,y_re,y_im,h,err")?;
        for i in 0..self.nodes.len() {
            let (x, y) = (self.nodes[i], self.values[i][0]);
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                x.re, x.im, y.re, y.im, self.steps[i], self.errors[i]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub tol: f64,
    pub blowup: f64,
    /// Steps below `underflow * max(|x|, 1)` abort the integration.
    pub underflow: f64,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self { tol: 1e-11, blowup: 1e8, underflow: 1e-13, max_steps: 500_000 }
    }
}

impl IntegrateOptions {
    /// Blow-up threshold `|y| ~ d^p` at distance `d = 1e-9` from a singularity
    /// of exponent `p`, capped at `1e8`. Weak singularities (`p = -1/2`) would
    /// otherwise need steps below the underflow floor.
    pub fn for_exponent(p: f64) -> Self {
        let blowup = if p < 0.0 { 1e-9f64.powf(p).min(1e8) } else { 1e8 };
        Self { blowup, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub x0: C64,
    pub y0: C64,
    /// Ignored for first-order equations.
    pub dy0: C64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntegrateError {
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("initial point {x0} is not the first path node {start}")]
    StartMismatch { x0: C64, start: C64 },
    #[error("step size underflow at x = {at} without blow-up")]
    StepUnderflow { at: C64, trace: Box<Trace> },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// `dY/dx` for the state `Y = [y, y']` (`y'` is carried only for `m = 2`).
fn rhs(eq: &NormalizedEquation, x: C64, y: &[C64; 2]) -> [C64; 2] {
    let z = ONE / x;
    if eq.m() == 1 {
        [eq.spec.eval(z, y[0]), ZERO]
    } else {
        [y[1], eq.spec.eval(z, y[0])]
    }
}

fn full_value(eq: &NormalizedEquation, x: C64, y: &[C64; 2]) -> [C64; 2] {
    if eq.m() == 1 {
        [y[0], eq.spec.eval(ONE / x, y[0])]
    } else {
        *y
    }
}

fn is_finite(v: &[C64; 2]) -> bool {
    v.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

/// One DOPRI step of arc length `h` along the unit direction `u`.
fn dopri_step(eq: &NormalizedEquation, x: C64, y: &[C64; 2], u: C64, h: f64) -> ([C64; 2], [C64; 2]) {
    let dim = if eq.m() == 1 { 1 } else { 2 };
    let hu = u * h;
    let mut k = [[ZERO; 2]; 7];
    for s in 0..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            for i in 0..dim {
                ys[i] += hu * A[s][j] * kj[i];
            }
        }
        k[s] = rhs(eq, x + hu * C[s], &ys);
    }
    let mut y5 = *y;
    let mut err = [ZERO; 2];
    for s in 0..7 {
        for i in 0..dim {
            y5[i] += hu * B5[s] * k[s][i];
            err[i] += hu * (B5[s] - B4[s]) * k[s][i];
        }
    }
    (y5, err)
}

/// Integrate from `init` along `path`.
pub fn integrate_path(
    eq: &NormalizedEquation,
    init: &InitialData,
    path: &PathSpec,
    opts: &IntegrateOptions,
) -> Result<Trace, IntegrateError> {
    if opts.tol.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(IntegrateError::BadTolerance);
    }
    let start = path.start();
    if (init.x0 - start).norm() > 1e-12 * (1.0 + start.norm()) {
        return Err(IntegrateError::StartMismatch { x0: init.x0, start });
    }
    let dim = if eq.m() == 1 { 1 } else { 2 };
    let mut y = [init.y0, if dim == 2 { init.dy0 } else { ZERO }];
    let mut trace = Trace {
        nodes: vec![start],
        values: vec![full_value(eq, start, &y)],
        steps: vec![0.0],
        errors: vec![0.0],
        rejections: vec![0],
        termination: Termination::Completed,
    };
    if y[0].norm() >= opts.blowup {
        trace.termination = Termination::Blowup;
        return Ok(trace);
    }
    // Error control is relative, with a floor tied to the starting magnitude so
    // zeros of y stay cheap. A floor that followed the running peak would let
    // errors grow after every near-miss of a pole.
    let floor = [1e-3 * y[0].norm(), 1e-3 * y[1].norm()];
    let mut h = 0.05f64;
    let mut total_steps = 0usize;
    for seg in path.nodes.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = (b - a).norm();
        if len == 0.0 {
            continue;
        }
        let u = (b - a) / len;
        let mut s = 0.0f64;
        let mut rejected = 0u32;
        while s < len {
            let x = a + u * s;
            let last = len - s <= h * (1.0 + 1e-12);
            let step = if last { len - s } else { h };
            let (y5, err) = dopri_step(eq, x, &y, u, step);
            let mut e = 0.0f64;
            for i in 0..dim {
                let sc = opts.tol * y[i].norm().max(y5[i].norm()).max(floor[i]);
                let ei = err[i].norm();
                e = e.max(if ei == 0.0 { 0.0 } else { ei / sc });
            }
            if !is_finite(&y5) || !e.is_finite() {
                e = f64::INFINITY;
            }
            if e <= 1.0 {
                s = if last { len } else { s + step };
                y = y5;
                let xn = if last { b } else { a + u * s };
                trace.nodes.push(xn);
                trace.values.push(full_value(eq, xn, &y));
                trace.steps.push(step);
                trace.errors.push(e);
                trace.rejections.push(rejected);
                rejected = 0;
                total_steps += 1;
                if y[0].norm() >= opts.blowup {
                    trace.termination = Termination::Blowup;
                    return Ok(trace);
                }
                if total_steps > opts.max_steps {
                    return Err(IntegrateError::TooManySteps(opts.max_steps));
                }
                let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    h = step * fac;
                }
            } else {
                rejected += 1;
                let fac = if e.is_finite() { (0.9 * e.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                h = step * fac;
            }
            if h < opts.underflow * x.norm().max(1.0) {
                trace.termination = Termination::StepUnderflow;
                return Err(IntegrateError::StepUnderflow { at: x, trace: Box::new(trace) });
            }
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityHit {
    pub x_s: C64,
    pub exponent: f64,
    /// Exponent from the slope of `y / y'`, an independent estimate.
    pub exponent_from_ratio: f64,
    pub fit_residual: f64,
    pub refine_radius: f64,
    pub trace_id: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefineError {
    #[error("trace did not terminate with a blow-up")]
    NoBlowup,
    #[error("only {0} nodes in the terminal window, need 12")]
    TooFewNodes(usize),
    #[error("|y| is not monotone near the end of the trace")]
    NonMonotone,
    #[error("degenerate fit near the end of the trace")]
    Degenerate,
    #[error("exponent fit residual {0:.3e} above threshold")]
    BadFit(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    /// Nodes with `|y|` at least this large form the terminal window.
    pub window_floor: f64,
    /// The window also excludes nodes below `window_span` times the final `|y|`.
    pub window_span: f64,
    pub min_nodes: usize,
    pub max_fit_residual: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { window_floor: 1e2, window_span: 1e-4, min_nodes: 12, max_fit_residual: 0.05 }
    }
}

fn terminal_window(trace: &Trace, opts: &RefineOptions) -> Result<usize, RefineError> {
    let n = trace.nodes.len();
    // Far nodes carry the next Laurent terms and bias the linear fit of y/y'.
    let floor = opts.window_floor.max(opts.window_span * trace.last_value().norm());
    let mut first = n;
    while first > 0 && trace.values[first - 1][0].norm() >= floor {
        first -= 1;
    }
    if n - first < opts.min_nodes {
        if n < opts.min_nodes {
            return Err(RefineError::TooFewNodes(n));
        }
        first = n - opts.min_nodes;
    }
    Ok(first)
}

/// Least-squares slope of `log|y|` against `log|x - x_s|`, with RMS residual.
pub fn fit_local_exponent(nodes: &[C64], ys: &[C64], x_s: C64) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = nodes
        .iter()
        .zip(ys)
        .filter(|(x, _)| (*x - x_s).norm() > 0.0)
        .map(|(x, y)| ((*x - x_s).norm().ln(), y.norm().ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![1.0, p.0]).collect();
    let b: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let c = series::lstsq_real(&rows, &b)?;
    let rms = (pts.iter().map(|p| (p.1 - c[0] - c[1] * p.0).powi(2)).sum::<f64>() / pts.len() as f64).sqrt();
    Some((c[1], rms))
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Locate the singularity at the end of a blown-up trace.
///
/// Near `x_s`, `y ~ K (x - x_s)^p` makes `y / y'` linear in `x` with slope
/// `1/p` and root `x_s`. A golden-section search along the approach direction
/// for the best power-law fit gives a second location, and the distance
/// between the two is reported as `refine_radius`.
pub fn refine_singularity(trace: &Trace, trace_id: usize, opts: &RefineOptions) -> Result<SingularityHit, RefineError> {
    if trace.termination != Termination::Blowup {
        return Err(RefineError::NoBlowup);
    }
    let first = terminal_window(trace, opts)?;
    let win = first..trace.nodes.len();
    let abs: Vec<f64> = trace.values[win.clone()].iter().map(|v| v[0].norm()).collect();
    if abs.windows(2).any(|w| w[1] < w[0] * (1.0 - 1e-6)) {
        return Err(RefineError::NonMonotone);
    }
    let xs: Vec<C64> = trace.nodes[win.clone()].to_vec();
    let ys: Vec<C64> = trace.values[win.clone()].iter().map(|v| v[0]).collect();
    let q: Vec<C64> = trace.values[win].iter().map(|v| v[0] / v[1]).collect();
    // Offsets from the last node keep the intercept from being swamped by |x|;
    // weights 1/|q| make the fit relative so nodes nearest the pole dominate.
    let origin = *xs.last().expect("window nonempty");
    let w: Vec<f64> = q.iter().map(|v| 1.0 / v.norm().max(1e-300)).collect();
    let a = nalgebra::DMatrix::<C64>::from_fn(xs.len(), 2, |i, j| if j == 0 { (xs[i] - origin) * w[i] } else { ONE * w[i] });
    let qw: Vec<C64> = q.iter().zip(&w).map(|(v, wi)| v * *wi).collect();
    let c = series::lstsq(&a, &qw).ok_or(RefineError::Degenerate)?;
    if c[0].norm() == 0.0 {
        return Err(RefineError::Degenerate);
    }
    let x_s = origin - c[1] / c[0];
    let p = (ONE / c[0]).re;

    let last = *xs.last().expect("window nonempty");
    let before = xs[xs.len() - 2];
    let dir = if (last - before).norm() > 0.0 { (last - before) / (last - before).norm() } else { ONE };
    let reach = (last - x_s).norm().max(1e-300);
    let rss = |t: f64| {
        let cand = x_s + dir * t;
        fit_local_exponent(&xs, &ys, cand).map_or(f64::INFINITY, |f| f.1)
    };
    let t = golden_min(rss, -0.5 * reach, 0.5 * reach, 60);
    let refine_radius = t.abs();

    let (exponent, fit_residual) = fit_local_exponent(&xs, &ys, x_s).ok_or(RefineError::Degenerate)?;
    if fit_residual > opts.max_fit_residual {
        return Err(RefineError::BadFit(fit_residual));
    }
    Ok(SingularityHit { x_s, exponent, exponent_from_ratio: p, fit_residual, refine_radius, trace_id })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormsingError {
    #[error("leading coefficient B_N vanishes at x = {0}")]
    VanishingLeading(C64),
}

/// `K |x|^{-q/m} |y|^{(1-N)/m}`, where `B_N(x) ~ x^q` is the coefficient of
/// the top power of `y`. For `m = 1` this is `K |x|^{-q} |y|^{1-N}`.
pub fn formsing_radius(eq: &NormalizedEquation, k: f64, x: C64, y: C64) -> Result<f64, FormsingError> {
    let n = eq.degree();
    let b = &eq.spec.coeffs[n];
    let lowest = b.iter().position(|c| *c != ZERO).ok_or(FormsingError::VanishingLeading(x))?;
    if series::eval(b, ONE / x).norm() < 1e-12 {
        return Err(FormsingError::VanishingLeading(x));
    }
    let q = -(lowest as f64);
    let m = eq.m() as f64;
    Ok(k * x.norm().powf(-q / m) * y.norm().powf((1.0 - n as f64) / m))
}

/// Calibration constant: `1.25` times the largest ratio of the true distance
/// `|x_j - x_s|` to the uncalibrated radius over the samples.
pub fn calibrate_formsing(eq: &NormalizedEquation, samples: &[(C64, C64)], x_s: C64) -> Result<f64, FormsingError> {
    let mut worst = 0.0f64;
    for &(x, y) in samples {
        let r = formsing_radius(eq, 1.0, x, y)?;
        worst = worst.max((x - x_s).norm() / r);
    }
    Ok(1.25 * worst)
}

/// Trace nodes with `lo <= |y| <= hi`.
pub fn samples_in_band(trace: &Trace, lo: f64, hi: f64) -> Vec<(C64, C64)> {
    trace
        .nodes
        .iter()
        .zip(&trace.values)
        .filter(|(_, v)| (lo..=hi).contains(&v[0].norm()))
        .map(|(x, v)| (*x, v[0]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eqmodel::{normalize, parse_equation};
    use crate::series::re;

    fn logistic() -> NormalizedEquation {
        normalize(&parse_equation("m=1; y^1: [-1]; y^2: [1]").unwrap()).unwrap()
    }

    fn exact(x: C64) -> C64 {
        let e = (-x).exp();
        e / (1.0 + e)
    }

    #[test]
    fn real_axis_matches_exact() {
        let eq = logistic();
        let path = PathSpec::new(vec![re(10.0), re(30.0)], 0.0).unwrap();
        let init = InitialData { x0: re(10.0), y0: exact(re(10.0)), dy0: ZERO };
        let t = integrate_path(&eq, &init, &path, &IntegrateOptions::default()).unwrap();
        assert_eq!(t.termination, Termination::Completed);
        assert!((t.last_value() - exact(re(30.0))).norm() < 1e-10);
    }

    #[test]
    fn zero_solution_stays_zero() {
        let eq = logistic();
        let path = PathSpec::new(vec![re(5.0), C64::new(5.0, 20.0)], 0.0).unwrap();
        let init = InitialData { x0: re(5.0), y0: ZERO, dy0: ZERO };
        let t = integrate_path(&eq, &init, &path, &IntegrateOptions::default()).unwrap();
        assert_eq!(t.termination, Termination::Completed);
        assert!(t.values.iter().all(|v| v[0] == ZERO));
    }

    #[test]
    fn synthetic_pole_trace() {
        let xs = C64::new(0.0, 2.0);
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for k in 0..40 {
            let x = xs - C64::new(0.0, 1.0) * 0.7f64.powi(k) * 0.5;
            nodes.push(x);
            values.push([ONE / (x - xs), -ONE / ((x - xs) * (x - xs))]);
        }
        let n = nodes.len();
        let t = Trace {
            nodes,
            values,
            steps: vec![0.0; n],
            errors: vec![0.0; n],
            rejections: vec![0; n],
            termination: Termination::Blowup,
        };
        let hit = refine_singularity(&t, 3, &RefineOptions::default()).unwrap();
        assert!((hit.x_s - xs).norm() < 1e-12);
        assert!((hit.exponent + 1.0).abs() < 1e-9);
        assert_eq!(hit.trace_id, 3);
    }

    #[test]
    fn formsing_scaling() {
        let eq = logistic();
        let r3 = formsing_radius(&eq, 1.0, re(5.0), re(1e3)).unwrap();
        let r6 = formsing_radius(&eq, 1.0, re(5.0), re(1e6)).unwrap();
        assert!((r3 - 1e-3).abs() < 1e-15);
        assert!((r6 / r3 - 1e-3).abs() < 1e-12);
        let cubic = normalize(&parse_equation("m=1; y^1: [-1]; y^3: [1]").unwrap()).unwrap();
        assert!((formsing_radius(&cubic, 1.0, re(5.0), re(1e3)).unwrap() - 1e-6).abs() < 1e-18);
    }
}
