//! The associated equation for the leading profile `F0(xi)`, `xi = x^alpha e^{-x}`,
//! its potential `Phi(s) = int_0^s A(0, t) dt`, and the singular time of
//! second-order equations obtained by integrating `(2 Phi)^{-1/2}` to infinity.
//!
//! The profile solves `L F0 = A(0, F0)` with `L = -xi d/dxi` for `m = 1` and
//! `L = xi^2 d^2/dxi^2 + xi d/dxi` for `m = 2`, normalized by `F0 ~ xi`.

use serde::{Deserialize, Serialize};

use crate::eqmodel::NormalizedEquation;
use crate::path::{ray_distance, segment_distance, PathSpec};
use crate::quadrature::{integrate_segment, QuadOptions};
use crate::series::{self, mul_trunc, pow_trunc, C64, ONE, ZERO};

pub const DEFAULT_F0_ORDER: usize = 40;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssociatedError {
    #[error("order must be at least 2")]
    BadOrder,
    #[error("equation is not normalized: lambda = {0}")]
    NotNormalized(C64),
    #[error("operator does not admit F0 ~ xi: linear-order mismatch {0}")]
    LinearMismatch(C64),
    #[error("resonant index {0} in the profile recurrence")]
    Resonance(usize),
    #[error("the singular-time integral needs a second-order equation")]
    NotSecondOrder,
    #[error("start point {0} is a zero of the potential")]
    StartAtZero(C64),
    #[error("path passes within {distance:.3e} of the potential zero {zero} (clearance {clearance:.3e})")]
    Clearance { zero: C64, distance: f64, clearance: f64 },
    #[error("tail integral did not settle after {doublings} doublings (last increment {increment:.3e})")]
    TailDivergent { doublings: usize, increment: f64 },
    #[error("branch tracking failed near {0}")]
    Branch(C64),
}

/// Sign convention of the first-order associated operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AssociatedSign {
    /// `-xi F0' = A(0, F0)`, consistent with `F0 ~ xi` when `lambda = -1`.
    #[default]
    Consistent,
    /// `xi F0' = A(0, F0)`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociatedSolution {
    /// `coeffs[n]` multiplies `xi^n`; `coeffs[0] = 0`, `coeffs[1] = 1`.
    pub coeffs: Vec<C64>,
    pub m: u8,
    pub operator_sign: AssociatedSign,
}

impl AssociatedSolution {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, xi: C64) -> C64 {
        series::eval(&self.coeffs, xi)
    }
}

fn eigen(m: u8, sign: AssociatedSign, n: usize) -> f64 {
    let n = n as f64;
    match (m, sign) {
        (1, AssociatedSign::Consistent) => -n,
        (1, AssociatedSign::Literal) => n,
        _ => n * n,
    }
}

/// `sum_{j>=2} h_j F^j` truncated to `len`.
fn nonlinear_part(h: &[C64], f: &[C64], len: usize) -> Vec<C64> {
    let mut out = vec![ZERO; len];
    let mut pow = f.to_vec();
    pow.resize(len, ZERO);
    for hj in h.iter().skip(2) {
        pow = mul_trunc(&pow, f, len);
        for (o, p) in out.iter_mut().zip(&pow) {
            *o += hj * p;
        }
    }
    out
}

/// Power series of `F0` through `xi^order`.
pub fn f0_series(
    eq: &NormalizedEquation,
    order: usize,
    sign: AssociatedSign,
) -> Result<AssociatedSolution, AssociatedError> {
    if order < 2 {
        return Err(AssociatedError::BadOrder);
    }
    let m = eq.m();
    let h = eq.spec.h_poly();
    let lambda = h[1];
    let expected = if m == 1 { -1.0 } else { 1.0 };
    if lambda != C64::new(expected, 0.0) {
        return Err(AssociatedError::NotNormalized(lambda));
    }
    let mismatch = eigen(m, sign, 1) - lambda;
    if mismatch.norm() != 0.0 {
        return Err(AssociatedError::LinearMismatch(mismatch));
    }
    let len = order + 1;
    let mut f = vec![ZERO; len];
    f[1] = ONE;
    for n in 2..len {
        let divisor = eigen(m, sign, n) - lambda;
        if divisor.norm() == 0.0 {
            return Err(AssociatedError::Resonance(n));
        }
        let rest = nonlinear_part(&h, &f[..n], n + 1);
        f[n] = rest[n] / divisor;
    }
    Ok(AssociatedSolution { coeffs: f, m, operator_sign: sign })
}

/// Coefficients of `L F0 - A(0, F0)` through the stored order.
pub fn f0_residual(eq: &NormalizedEquation, sol: &AssociatedSolution) -> Vec<C64> {
    let h = eq.spec.h_poly();
    let len = sol.coeffs.len();
    let nl = nonlinear_part(&h, &sol.coeffs, len);
    (0..len)
        .map(|n| {
            let fnn = sol.coeffs[n];
            (eigen(sol.m, sol.operator_sign, n) - h[1]) * fnn - nl[n] - if n == 0 { h[0] } else { ZERO }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    /// `H = A(0, .)`, ascending.
    pub h: Vec<C64>,
    /// `Phi`, ascending, `phi[0] = 0`.
    pub phi: Vec<C64>,
    /// Zeros of `Phi` with multiplicity.
    pub zeros: Vec<C64>,
}

impl Potential {
    pub fn eval(&self, s: C64) -> C64 {
        series::eval(&self.phi, s)
    }

    /// Distinct zeros (multiplicities merged within `1e-8`).
    pub fn distinct_zeros(&self) -> Vec<C64> {
        let mut out: Vec<C64> = Vec::new();
        for z in &self.zeros {
            if out.iter().all(|o| (o - z).norm() > 1e-8 * (1.0 + z.norm())) {
                out.push(*z);
            }
        }
        out
    }
}

pub fn potential(eq: &NormalizedEquation) -> Result<Potential, AssociatedError> {
    if eq.m() != 2 {
        return Err(AssociatedError::NotSecondOrder);
    }
    Ok(potential_of(&eq.spec.h_poly()))
}

pub fn potential_of(h: &[C64]) -> Potential {
    let mut phi = vec![ZERO];
    phi.extend(h.iter().enumerate().map(|(j, c)| c / (j + 1) as f64));
    let zeros = series::poly_roots(&phi);
    Potential { h: h.to_vec(), phi, zeros }
}

/// Initial determination of `w = (2 Phi)^{1/2}` at the start point. For a
/// decaying solution `g' ~ -g`, which is [`SqrtBranch::Negated`] for small
/// positive `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SqrtBranch {
    Principal,
    #[default]
    Negated,
}

#[derive(Debug, Clone, Copy)]
pub struct JOptions {
    pub branch: SqrtBranch,
    /// Increment threshold for the tail doubling test.
    pub tail_tol: f64,
    pub max_doublings: usize,
    /// Largest change of `arg Phi` allowed inside one quadrature piece.
    pub max_arg_step: f64,
}

impl Default for JOptions {
    fn default() -> Self {
        Self { branch: SqrtBranch::Negated, tail_tol: 1e-10, max_doublings: 20, max_arg_step: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JIntegral {
    pub t_s: C64,
    /// Integral over the finite polyline.
    pub path_part: C64,
    /// Remaining integral from the last node to infinity.
    pub tail_part: C64,
    pub error: f64,
    pub doublings: usize,
    pub last_increment: f64,
}

struct Tracker<'a> {
    pot: &'a Potential,
    opts: QuadOptions,
    max_arg: f64,
    error: f64,
}

impl Tracker<'_> {
    fn two_phi(&self, s: C64) -> C64 {
        2.0 * self.pot.eval(s)
    }

    /// Integrate `1/w` from `a` to `b` where `w(a) = wa`; returns the integral and `w(b)`.
    fn segment(&mut self, a: C64, b: C64, wa: C64, depth: usize) -> Result<(C64, C64), AssociatedError> {
        let pa = self.two_phi(a);
        let mid = 0.5 * (a + b);
        let pm = self.two_phi(mid);
        let pb = self.two_phi(b);
        let smooth = (pm / pa).arg().abs() < self.max_arg && (pb / pm).arg().abs() < self.max_arg;
        if !smooth {
            if depth > 60 {
                return Err(AssociatedError::Branch(mid));
            }
            let (i1, wm) = self.segment(a, mid, wa, depth + 1)?;
            let (i2, wb) = self.segment(mid, b, wm, depth + 1)?;
            return Ok((i1 + i2, wb));
        }
        let f = |s: C64| ONE / (wa * (self.two_phi(s) / pa).sqrt());
        let r = integrate_segment(&f, a, b, &self.opts);
        self.error += r.error;
        Ok((r.value, wa * (pb / pa).sqrt()))
    }
}

/// Integral of `s^{-D/2} (1 + E(1/s))^{-1/2}` type tail from `s` to infinity,
/// matched to the tracked value `w` at `s`. `None` when `deg Phi <= 2`.
fn asymptotic_tail(pot: &Potential, s: C64, w: C64) -> Option<C64> {
    let two_phi: Vec<C64> = series::trim_trailing(pot.phi.iter().map(|c| 2.0 * c).collect(), 0.0);
    let d = two_phi.len() - 1;
    if d <= 2 {
        return None;
    }
    let lead = two_phi[d];
    // 1 + E(u), u = 1/s
    let e: Vec<C64> = (0..=d).map(|k| two_phi[d - k] / lead).collect();
    const TERMS: usize = 14;
    let b = pow_trunc(&e, C64::new(-0.5, 0.0), TERMS);
    let half = d as f64 / 2.0;
    let u = ONE / s;
    let shape = lead.powf(-0.5) * s.powf(-half) * series::eval(&b, u);
    let sigma = if ((ONE / w) / shape - ONE).norm() < 1.0 { 1.0 } else { -1.0 };
    let mut tail = ZERO;
    for (k, bk) in b.iter().enumerate() {
        let p = half + k as f64 - 1.0;
        tail += bk * s.powf(-p) / p;
    }
    Some(sigma * lead.powf(-0.5) * tail)
}

/// Singular time `t_s = t0 + int_{g0}^{infinity} (2 Phi(s))^{-1/2} ds` along
/// `path` followed by the ray continuing its last segment.
pub fn singular_time_j_integral(
    pot: &Potential,
    t0: C64,
    g0: C64,
    path: &PathSpec,
    opts: &JOptions,
) -> Result<JIntegral, AssociatedError> {
    let mut nodes = path.nodes.clone();
    if (nodes[0] - g0).norm() > 1e-14 * (1.0 + g0.norm()) {
        nodes.insert(0, g0);
    }
    let zeros = pot.distinct_zeros();
    for z in &zeros {
        if (g0 - z).norm() < 1e-300f64.max(1e-14 * g0.norm()) {
            return Err(AssociatedError::StartAtZero(g0));
        }
    }
    let n = nodes.len();
    let dir = nodes[n - 1] - nodes[n - 2];
    let dir = dir / dir.norm();
    for z in &zeros {
        let seg = nodes.windows(2).map(|w| segment_distance(w[0], w[1], *z)).fold(f64::INFINITY, f64::min);
        let dist = seg.min(ray_distance(nodes[n - 1], dir, *z));
        if dist < path.clearance {
            return Err(AssociatedError::Clearance { zero: *z, distance: dist, clearance: path.clearance });
        }
    }

    let mut tr = Tracker {
        pot,
        opts: QuadOptions { abs_tol: 1e-15, rel_tol: 1e-13, max_panels: 2000 },
        max_arg: opts.max_arg_step,
        error: 0.0,
    };
    let principal = tr.two_phi(g0).sqrt();
    let mut w = match opts.branch {
        SqrtBranch::Principal => principal,
        SqrtBranch::Negated => -principal,
    };
    let mut path_part = ZERO;
    for win in nodes.windows(2) {
        let (v, wb) = tr.segment(win[0], win[1], w, 0)?;
        path_part += v;
        w = wb;
    }

    let start = nodes[n - 1];
    let scale = zeros.iter().fold(start.norm().max(1.0), |m, z| m.max(z.norm()));
    let mut reach = 2.0 * scale;
    let mut pos = start;
    let mut acc = ZERO;
    let mut prev: Option<C64> = None;
    let mut increment = f64::INFINITY;
    for doubling in 0..=opts.max_doublings {
        let next = start + dir * reach;
        let (v, wn) = tr.segment(pos, next, w, 0)?;
        acc += v;
        pos = next;
        w = wn;
        let est = acc + asymptotic_tail(pot, pos, w).unwrap_or(ZERO);
        if let Some(p) = prev {
            increment = (est - p).norm();
            if increment < opts.tail_tol {
                let error = tr.error + increment;
                return Ok(JIntegral {
                    t_s: t0 + path_part + est,
                    path_part,
                    tail_part: est,
                    error,
                    doublings: doubling,
                    last_increment: increment,
                });
            }
        }
        prev = Some(est);
        reach *= 2.0;
    }
    Err(AssociatedError::TailDivergent { doublings: opts.max_doublings, increment })
}

/// Image under the `F0` series of a `xi`-path that runs along `|xi| = |xi0|`
/// from `xi0` to the direction of `xi_s` (through the upper half plane when
/// `upper`), then radially to `reach * xi_s`.
pub fn profile_path(sol: &AssociatedSolution, xi0: C64, xi_s: C64, upper: bool, reach: f64) -> Vec<C64> {
    let r0 = xi0.norm();
    let a0 = xi0.arg();
    let mut a1 = xi_s.arg();
    if upper && a1 < a0 {
        a1 += 2.0 * std::f64::consts::PI;
    }
    if !upper && a1 > a0 {
        a1 -= 2.0 * std::f64::consts::PI;
    }
    let mut xi = crate::path::arc(ZERO, r0, a0, a1, 48);
    let r1 = reach * xi_s.norm();
    let radial = 24;
    for k in 1..=radial {
        let r = r0 * (r1 / r0).powf(k as f64 / radial as f64);
        xi.push(C64::from_polar(r, a1));
    }
    xi.iter().map(|z| sol.eval(*z)).collect()
}
