//! Finding singularities by integration: Newton homing from a starting guess,
//! and sector scans along rays that continue past the singularities they meet.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eqmodel::NormalizedEquation;
use crate::integrator::{
    integrate_path, refine_singularity, InitialData, IntegrateError, IntegrateOptions, RefineError, RefineOptions,
    SingularityHit, Termination, Trace,
};
use crate::path::{PathError, PathSpec};
use crate::series::{C64, ONE};

pub const THREADS_ENV: &str = "STOKES_ARRAY_THREADS";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScanError {
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("homing toward {target} did not reach a blow-up in {iterations} iterations")]
    NotFound { target: C64, iterations: usize },
    #[error("sector angles must satisfy theta1 < theta2 and count >= 1")]
    BadSector,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HomingOptions {
    /// How far past the target the first path continues.
    pub offset: f64,
    /// Newton steps shorter than this trigger the final overshooting segment.
    pub close: f64,
    pub overshoot: f64,
    pub max_step: f64,
    pub max_iterations: usize,
}

impl Default for HomingOptions {
    fn default() -> Self {
        Self { offset: 1.0, close: 0.05, overshoot: 1.25, max_step: 1.0, max_iterations: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomingResult {
    pub hit: SingularityHit,
    pub iterations: usize,
    /// The final trace, ending in the blow-up.
    pub trace: Trace,
}

fn argmax_abs(trace: &Trace) -> usize {
    (0..trace.nodes.len())
        .max_by(|&a, &b| trace.values[a][0].norm().total_cmp(&trace.values[b][0].norm()))
        .unwrap_or(0)
}

fn init_at(trace: &Trace, i: usize) -> InitialData {
    InitialData { x0: trace.nodes[i], y0: trace.values[i][0], dy0: trace.values[i][1] }
}

/// Newton iteration on `eta = y^{1/p}` (linear in `x` near a singularity of
/// exponent `p`) started from node `start` of `trace`.
fn newton_home(
    eq: &NormalizedEquation,
    trace: Trace,
    start: usize,
    target: C64,
    iopts: &IntegrateOptions,
    ropts: &RefineOptions,
    hopts: &HomingOptions,
    trace_id: usize,
) -> Result<HomingResult, ScanError> {
    let p = eq.theoretical_exponent();
    let mut cur = init_at(&trace, start);
    for it in 1..=hopts.max_iterations {
        let step = -p * cur.y0 / current_derivative(eq, &cur);
        let (dest, close) = if step.norm() < hopts.close {
            (cur.x0 + step * hopts.overshoot, true)
        } else if step.norm() > hopts.max_step {
            (cur.x0 + step * (hopts.max_step / step.norm()), false)
        } else {
            (cur.x0 + step, false)
        };
        if !step.re.is_finite() || !step.im.is_finite() || step.norm() == 0.0 {
            break;
        }
        let path = PathSpec::new(vec![cur.x0, dest], 0.0)?;
        let t = integrate_path(eq, &cur, &path, iopts)?;
        if t.termination == Termination::Blowup {
            let hit = refine_singularity(&t, trace_id, ropts)?;
            return Ok(HomingResult { hit, iterations: it, trace: t });
        }
        let next = if close { argmax_abs(&t) } else { t.nodes.len() - 1 };
        cur = init_at(&t, next);
    }
    Err(ScanError::NotFound { target, iterations: hopts.max_iterations })
}

fn current_derivative(eq: &NormalizedEquation, d: &InitialData) -> C64 {
    if eq.m() == 1 {
        eq.spec.eval(ONE / d.x0, d.y0)
    } else {
        d.dy0
    }
}

/// Integrate from `init` up to the line `Im x = Im target`, then along it
/// through the target, and home in on the singularity found near it.
pub fn home_singularity(
    eq: &NormalizedEquation,
    init: &InitialData,
    target: C64,
    iopts: &IntegrateOptions,
    ropts: &RefineOptions,
    hopts: &HomingOptions,
    trace_id: usize,
) -> Result<HomingResult, ScanError> {
    let corner = C64::new(init.x0.re, target.im);
    let mut nodes = vec![init.x0];
    if (corner - init.x0).norm() > 0.0 {
        nodes.push(corner);
    }
    let d = target - corner;
    let dir = if d.norm() > 1e-12 { d / d.norm() } else { -ONE };
    nodes.push(target + dir * hopts.offset);
    let path = PathSpec::new(nodes, 0.0)?;
    let t = integrate_path(eq, init, &path, iopts)?;
    if t.termination == Termination::Blowup {
        let hit = refine_singularity(&t, trace_id, ropts)?;
        return Ok(HomingResult { hit, iterations: 0, trace: t });
    }
    let start = argmax_abs(&t);
    newton_home(eq, t, start, target, iopts, ropts, hopts, trace_id)
}

fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|n| *n > 0)
}

/// Cap rayon's global pool by [`THREADS_ENV`], if set. Call before any
/// parallel work; returns false when the variable is unset or the pool
/// already exists.
pub fn init_global_threads() -> bool {
    threads_from_env().is_some_and(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok())
}

/// Thread pool honoring [`THREADS_ENV`].
pub fn thread_pool() -> rayon::ThreadPool {
    let n = threads_from_env();
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        b = b.num_threads(n);
    }
    b.build().expect("thread pool")
}

/// Home on every target in parallel; results are in target order.
pub fn home_targets(
    eq: &NormalizedEquation,
    init: &InitialData,
    targets: &[C64],
    iopts: &IntegrateOptions,
    ropts: &RefineOptions,
    hopts: &HomingOptions,
) -> Vec<Result<HomingResult, ScanError>> {
    thread_pool().install(|| {
        targets
            .par_iter()
            .enumerate()
            .map(|(i, t)| home_singularity(eq, init, *t, iopts, ropts, hopts, i))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SectorScan {
    pub theta1: f64,
    pub theta2: f64,
    pub count: usize,
    /// Radius of the arc joining the real axis to each ray.
    pub r_min: f64,
    pub r_max: f64,
    /// Local maxima of `|y|` above this are homed in on.
    pub threshold: f64,
    /// Radius of the detour around known singularities.
    pub clearance: f64,
    pub max_hits_per_ray: usize,
}

impl SectorScan {
    pub fn new(theta1: f64, theta2: f64, count: usize) -> Self {
        Self { theta1, theta2, count, r_min: 2.0, r_max: 30.0, threshold: 3.0, clearance: 0.2, max_hits_per_ray: 24 }
    }

    /// Like [`SectorScan::new`], with the homing threshold `0.3^p`: the size of
    /// `|y|` at distance 0.3 from a singularity of exponent `p`.
    pub fn for_exponent(theta1: f64, theta2: f64, count: usize, p: f64) -> Self {
        let threshold = if p < 0.0 { 0.3f64.powf(p) } else { 3.0 };
        Self { threshold, ..Self::new(theta1, theta2, count) }
    }

    pub fn angles(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![0.5 * (self.theta1 + self.theta2)];
        }
        (0..self.count)
            .map(|k| self.theta1 + (self.theta2 - self.theta1) * k as f64 / (self.count - 1) as f64)
            .collect()
    }
}

/// Parse `"theta1:theta2:count"` (angles in radians).
pub fn parse_sector(text: &str) -> Option<SectorScan> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let t1 = parts[0].trim().parse().ok()?;
    let t2 = parts[1].trim().parse().ok()?;
    let n = parts[2].trim().parse().ok()?;
    Some(SectorScan::new(t1, t2, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayReport {
    pub angle: f64,
    pub hits: usize,
    pub termination: Termination,
    pub detours: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub hits: Vec<SingularityHit>,
    pub rays: Vec<RayReport>,
}

/// Nodes of the polyline `base` with a circular detour of radius `r` around
/// each point of `around` that lies within `r` of it. `side = 1` passes on the
/// left of the direction of travel.
pub fn deform_path(base: &[C64], around: &[C64], r: f64, side: f64) -> Vec<C64> {
    let mut out = vec![base[0]];
    for w in base.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = (b - a).norm();
        if len == 0.0 {
            continue;
        }
        let u = (b - a) / len;
        let mut cuts: Vec<(f64, f64, C64)> = around
            .iter()
            .filter_map(|&c| {
                let rel = (c - a) / u;
                let (t, delta) = (rel.re, rel.im);
                if delta.abs() >= r {
                    return None;
                }
                let half = (r * r - delta * delta).sqrt();
                (t + half > 0.0 && t - half < len).then_some((t - half, t + half, c))
            })
            .collect();
        cuts.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (t_in, t_out, c) in cuts {
            let entry = a + u * t_in.max(0.0);
            let exit = a + u * t_out.min(len);
            let a0 = (entry - c).arg();
            let mut a1 = (exit - c).arg();
            // Turn from entry to exit on the requested side.
            if side > 0.0 {
                while a1 > a0 {
                    a1 -= 2.0 * std::f64::consts::PI;
                }
                if a0 - a1 > 2.0 * std::f64::consts::PI {
                    a1 += 2.0 * std::f64::consts::PI;
                }
            } else {
                while a1 < a0 {
                    a1 += 2.0 * std::f64::consts::PI;
                }
                if a1 - a0 > 2.0 * std::f64::consts::PI {
                    a1 -= 2.0 * std::f64::consts::PI;
                }
            }
            let rr = (entry - c).norm();
            out.push(entry);
            for k in 1..16 {
                let th = a0 + (a1 - a0) * k as f64 / 16.0;
                out.push(c + C64::from_polar(rr, th));
            }
            out.push(exit);
        }
        out.push(b);
    }
    out.dedup();
    out
}

fn ray_base(init: &InitialData, theta: f64, sc: &SectorScan) -> Vec<C64> {
    let r0 = C64::new(sc.r_min, 0.0);
    let mut nodes = vec![init.x0];
    if (init.x0 - r0).norm() > 0.0 {
        nodes.push(r0);
    }
    let arc = crate::path::arc(C64::new(0.0, 0.0), sc.r_min, 0.0, theta, 24);
    nodes.extend(arc.into_iter().skip(1));
    nodes.push(C64::from_polar(sc.r_max, theta));
    nodes
}

fn local_maxima(trace: &Trace, threshold: f64) -> Vec<usize> {
    let a: Vec<f64> = trace.values.iter().map(|v| v[0].norm()).collect();
    (1..a.len().saturating_sub(1)).filter(|&i| a[i] > threshold && a[i] >= a[i - 1] && a[i] >= a[i + 1]).collect()
}

fn scan_ray(
    eq: &NormalizedEquation,
    init: &InitialData,
    theta: f64,
    sc: &SectorScan,
    iopts: &IntegrateOptions,
    ropts: &RefineOptions,
    hopts: &HomingOptions,
    ray_id: usize,
) -> (Vec<SingularityHit>, RayReport) {
    let mid = 0.5 * (sc.theta1 + sc.theta2);
    // Detour toward the middle of the sector; rays run outward, so the left
    // side is the side of increasing angle.
    let side = if theta <= mid { 1.0 } else { -1.0 };
    let base = ray_base(init, theta, sc);
    let mut hits: Vec<SingularityHit> = Vec::new();
    let mut detours = 0;
    let mut tried: Vec<C64> = Vec::new();
    let mut termination = Termination::Completed;
    for _ in 0..=sc.max_hits_per_ray {
        let centers: Vec<C64> = hits.iter().map(|h| h.x_s).collect();
        let nodes = deform_path(&base, &centers, sc.clearance, side);
        let Ok(path) = PathSpec::new(nodes, sc.clearance) else { break };
        let trace = match integrate_path(eq, init, &path, iopts) {
            Ok(t) => t,
            Err(IntegrateError::StepUnderflow { .. }) => {
                termination = Termination::StepUnderflow;
                break;
            }
            Err(_) => break,
        };
        if trace.termination == Termination::Blowup {
            termination = Termination::Blowup;
            match refine_singularity(&trace, ray_id, ropts) {
                Ok(h) if hits.iter().all(|o| (o.x_s - h.x_s).norm() > MERGE_RADIUS) => {
                    hits.push(h);
                    detours += 1;
                    continue;
                }
                _ => break,
            }
        }
        termination = Termination::Completed;
        // Take maxima in path order and restart after each new hit: a close
        // pass by a pole spoils the rest of the trace, so the detour must be
        // in place before anything beyond it is trusted.
        let mut found = false;
        for i in local_maxima(&trace, sc.threshold) {
            let x = trace.nodes[i];
            let near = |c: &C64| (c - x).norm() < 1.5 * sc.clearance;
            if hits.iter().any(|h| near(&h.x_s)) || tried.iter().any(near) {
                continue;
            }
            tried.push(x);
            if let Ok(r) = newton_home(eq, trace.clone(), i, x, iopts, ropts, hopts, ray_id) {
                if hits.iter().all(|o| (o.x_s - r.hit.x_s).norm() > MERGE_RADIUS) {
                    hits.push(r.hit);
                    detours += 1;
                    found = true;
                    break;
                }
            }
        }
        if !found {
            break;
        }
    }
    let report = RayReport { angle: theta, hits: hits.len(), termination, detours };
    (hits, report)
}

/// Scan the sector `theta1 <= arg x <= theta2` with `count` rays.
pub fn scan_sector(
    eq: &NormalizedEquation,
    init: &InitialData,
    sc: &SectorScan,
    iopts: &IntegrateOptions,
    ropts: &RefineOptions,
    hopts: &HomingOptions,
) -> Result<ScanReport, ScanError> {
    if sc.count == 0 || sc.theta1.partial_cmp(&sc.theta2) != Some(std::cmp::Ordering::Less) && sc.count > 1 {
        return Err(ScanError::BadSector);
    }
    let angles = sc.angles();
    let per_ray: Vec<(Vec<SingularityHit>, RayReport)> = thread_pool().install(|| {
        angles
            .par_iter()
            .enumerate()
            .map(|(i, &th)| scan_ray(eq, init, th, sc, iopts, ropts, hopts, i))
            .collect()
    });
    let mut hits: Vec<SingularityHit> = Vec::new();
    let mut rays = Vec::new();
    for (hs, rep) in per_ray {
        for h in hs {
            merge_hit(&mut hits, h);
        }
        rays.push(rep);
    }
    hits.sort_by(|a, b| a.x_s.im.total_cmp(&b.x_s.im).then(a.x_s.re.total_cmp(&b.x_s.re)));
    Ok(ScanReport { hits, rays })
}

/// Radius within which two hits are taken to be the same singularity.
pub const MERGE_RADIUS: f64 = 1e-3;

/// Add `h`, or let it replace a nearby hit with a worse fit.
pub fn merge_hit(hits: &mut Vec<SingularityHit>, h: SingularityHit) {
    match hits.iter_mut().find(|o| (o.x_s - h.x_s).norm() < MERGE_RADIUS) {
        Some(o) if h.fit_residual < o.fit_residual => *o = h,
        Some(_) => {}
        None => hits.push(h),
    }
}

/// Hits with `|x_s| <= radius`.
pub fn count_within(hits: &[SingularityHit], radius: f64) -> usize {
    hits.iter().filter(|h| h.x_s.norm() <= radius).count()
}
