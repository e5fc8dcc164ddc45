//! Nearest singularities of a power series.
//!
//! Two independent estimates are combined. Padé poles are computed for a
//! window of diagonal orders and clustered; clusters seen at most orders are
//! kept. Coefficient ratios give a second estimate of the location and the
//! exponent. When the plain approximants do not produce a stable cluster
//! (branch points), the logarithmic derivative of `F(xi)/xi` is approximated
//! instead, whose poles are simple with residue equal to the exponent.

use serde::{Deserialize, Serialize};

use crate::associated::AssociatedSolution;
use crate::pade::{robust_pade, Rational};
use crate::series::{self, C64, ONE, ZERO};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LocateError {
    #[error("need at least {need} coefficients, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("no stable pole cluster across Padé orders {lo}..={hi}")]
    NoStableCluster { lo: usize, hi: usize },
    #[error("Padé and ratio estimates disagree (relative difference {0:.3e})")]
    Disagree(f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LocateOptions {
    pub min_order: usize,
    pub max_order: usize,
    pub pade_tol: f64,
    /// Poles with an approximant zero closer than this are discarded.
    pub froissart: f64,
    pub cluster_radius: f64,
    /// Largest accepted relative mismatch between the two methods.
    pub agreement: f64,
    /// Ratio fits with a larger relative residual count as unconverged.
    pub ratio_residual: f64,
}

impl Default for LocateOptions {
    fn default() -> Self {
        Self {
            min_order: 8,
            max_order: 16,
            pade_tol: 1e-13,
            froissart: 1e-6,
            cluster_radius: 1e-4,
            agreement: 1e-3,
            ratio_residual: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoleCluster {
    pub location: C64,
    /// Number of Padé orders in which the pole appears.
    pub orders: usize,
    /// Poles per order (multiplicity of the pole in the approximants).
    pub multiplicity: usize,
    /// Largest deviation of the per-order location from the cluster mean.
    pub drift: f64,
    /// Mean residue (only meaningful for logarithmic-derivative clusters).
    pub residue: C64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioFit {
    /// Nonzero coefficients sit at `offset + stride * k`.
    pub stride: usize,
    pub offset: usize,
    /// Singularity of `G(v)` where `F = xi^offset G(xi^stride)`, in `v` units.
    pub v_s: C64,
    pub exponent: C64,
    pub radius: f64,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoleMethod {
    Pade,
    LogDerivative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub method: PoleMethod,
    pub pade_drift: f64,
    pub orders_supporting: usize,
    pub orders_tried: usize,
    pub ratio_residual: f64,
    pub ratio_converged: bool,
    /// Relative mismatch between the Padé and ratio locations.
    pub disagreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityEstimate {
    pub xi_s: C64,
    /// All stable singularities on the circle of `xi_s`, sorted by argument.
    pub candidates: Vec<C64>,
    pub exponent: f64,
    pub radius: f64,
    pub confidence: Confidence,
}

fn root_test_radius(f: &[C64]) -> f64 {
    let nz: Vec<(usize, f64)> = f
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| c.norm() > 0.0)
        .map(|(n, c)| (n, c.norm()))
        .collect();
    if nz.is_empty() {
        return 1.0;
    }
    let tail = &nz[nz.len() / 2..];
    let mut est: Vec<f64> = tail.iter().map(|(n, a)| a.powf(-1.0 / *n as f64)).collect();
    est.sort_by(f64::total_cmp);
    let r = est[est.len() / 2];
    if r.is_finite() && r > 0.0 {
        r
    } else {
        1.0
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Domb–Sykes analysis: fit `b_k / b_{k-1} = A + B/k + C/k^2 + D/k^3` over the
/// upper half of the available ratios of the stride-reduced series.
pub fn ratio_fit(f: &[C64], opts: &LocateOptions) -> Option<RatioFit> {
    let rho = root_test_radius(f);
    let g: Vec<C64> = f.iter().enumerate().map(|(n, c)| c * rho.powi(n as i32)).collect();
    let gmax = g.iter().fold(0.0f64, |m, c| m.max(c.norm()));
    let nz: Vec<usize> = (0..g.len()).filter(|&n| g[n].norm() > 1e-12 * gmax).collect();
    let offset = *nz.first()?;
    let stride = nz.iter().fold(0, |d, &n| gcd(d, n - offset)).max(1);
    let b: Vec<C64> = (offset..g.len()).step_by(stride).map(|n| g[n]).collect();
    if b.len() < 8 || b.iter().any(|x| *x == ZERO) {
        return None;
    }
    let ratios: Vec<(f64, C64)> = (1..b.len()).map(|k| (k as f64, b[k] / b[k - 1])).collect();
    let window = &ratios[ratios.len() / 2..];
    let a = nalgebra::DMatrix::<C64>::from_fn(window.len(), 4, |i, j| {
        C64::new(window[i].0.powi(-(j as i32)), 0.0)
    });
    let y: Vec<C64> = window.iter().map(|w| w.1).collect();
    let p = series::lstsq(&a, &y)?;
    let lead = p[0];
    if lead.norm() == 0.0 {
        return None;
    }
    let rms = (window
        .iter()
        .map(|(k, r)| {
            let fit = p[0] + p[1] / k + p[2] / (k * k) + p[3] / (k * k * k);
            (r - fit).norm_sqr()
        })
        .sum::<f64>()
        / window.len() as f64)
        .sqrt();
    let residual = rms / lead.norm();
    // Back to xi units: v = xi^stride = (rho u)^stride.
    let v_s = rho.powi(stride as i32) / lead;
    Some(RatioFit {
        stride,
        offset,
        v_s,
        exponent: -ONE - p[1] / lead,
        radius: v_s.norm().powf(1.0 / stride as f64),
        residual,
        converged: residual < opts.ratio_residual,
    })
}

fn cluster(poles: &[(usize, C64, C64)], radius: f64, orders_tried: usize) -> Vec<PoleCluster> {
    struct Acc {
        center: C64,
        members: Vec<(usize, C64, C64)>,
    }
    let mut acc: Vec<Acc> = Vec::new();
    for &(l, p, res) in poles {
        let nearest = acc
            .iter_mut()
            .map(|a| ((a.center - p).norm(), a))
            .filter(|(d, _)| *d < radius)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match nearest {
            Some((_, a)) => {
                a.members.push((l, p, res));
                let n = a.members.len() as f64;
                a.center = a.members.iter().fold(ZERO, |s, m| s + m.1) / n;
            }
            None => acc.push(Acc { center: p, members: vec![(l, p, res)] }),
        }
    }
    let need = orders_tried.div_ceil(2);
    acc.into_iter()
        .filter_map(|a| {
            let mut orders: Vec<usize> = a.members.iter().map(|m| m.0).collect();
            orders.sort_unstable();
            orders.dedup();
            if orders.len() < need {
                return None;
            }
            let per_order: Vec<C64> = orders
                .iter()
                .map(|l| {
                    let ms: Vec<C64> = a.members.iter().filter(|m| m.0 == *l).map(|m| m.1).collect();
                    ms.iter().sum::<C64>() / ms.len() as f64
                })
                .collect();
            let location = per_order.iter().sum::<C64>() / per_order.len() as f64;
            let drift = per_order.iter().map(|p| (p - location).norm()).fold(0.0, f64::max);
            let residue = a.members.iter().map(|m| m.2).sum::<C64>() / a.members.len() as f64;
            Some(PoleCluster {
                location,
                orders: orders.len(),
                multiplicity: (a.members.len() as f64 / orders.len() as f64).round() as usize,
                drift,
                residue,
            })
        })
        .collect()
}

/// Poles of `[L/L]` approximants of `c(rho u)` for each `L` in the window,
/// mapped back to `xi`. Entries are `(L, pole, residue)`.
fn pade_poles(c: &[C64], rho: f64, opts: &LocateOptions) -> (Vec<(usize, C64, C64)>, usize) {
    let scaled: Vec<C64> = c.iter().enumerate().map(|(n, x)| x * rho.powi(n as i32)).collect();
    let mut out = Vec::new();
    let mut tried = 0;
    for l in opts.min_order..=opts.max_order {
        if 2 * l + 1 > scaled.len() {
            break;
        }
        tried += 1;
        let r: Rational = robust_pade(&scaled, l, l, opts.pade_tol);
        let zeros = r.zeros();
        for p in r.poles() {
            if p.norm() > 2.0 || zeros.iter().any(|z| (z - p).norm() < opts.froissart) {
                continue;
            }
            out.push((l, p * rho, r.residue(p) * rho));
        }
    }
    (out, tried)
}

fn on_nearest_circle(clusters: &[PoleCluster]) -> Vec<PoleCluster> {
    let rmin = clusters.iter().map(|c| c.location.norm()).fold(f64::INFINITY, f64::min);
    let mut out: Vec<PoleCluster> =
        clusters.iter().filter(|c| c.location.norm() <= rmin * (1.0 + 1e-3)).cloned().collect();
    out.sort_by(|a, b| a.location.arg().total_cmp(&b.location.arg()));
    out
}

/// Locate the singularities of `F0` nearest to the origin.
pub fn locate_xi_singularity(
    sol: &AssociatedSolution,
    opts: &LocateOptions,
) -> Result<SingularityEstimate, LocateError> {
    locate_series(&sol.coeffs, opts)
}

/// [`locate_xi_singularity`] for a bare coefficient list with `c[0] = 0`, `c[1] != 0`.
pub fn locate_series(c: &[C64], opts: &LocateOptions) -> Result<SingularityEstimate, LocateError> {
    if c.len() < 20 {
        return Err(LocateError::TooShort { need: 20, got: c.len() });
    }
    let rho = root_test_radius(c);
    let ratio = ratio_fit(c, opts);

    let (poles, tried) = pade_poles(c, rho, opts);
    let radius_abs = opts.cluster_radius * rho;
    let plain = cluster(&poles, radius_abs, tried);
    let (method, chosen) = if !plain.is_empty() {
        (PoleMethod::Pade, on_nearest_circle(&plain))
    } else {
        // d/dxi log(F/xi)
        let q: Vec<C64> = c[1..].to_vec();
        let dq = series::derivative(&q);
        let inv = series::recip_trunc(&q, dq.len());
        let g = series::mul_trunc(&dq, &inv, dq.len());
        let (lpoles, ltried) = pade_poles(&g, rho, opts);
        let lpoles: Vec<(usize, C64, C64)> = lpoles
            .into_iter()
            .filter(|(_, _, r)| {
                let k = r.re.round();
                !(k >= 1.0 && (r - C64::new(k, 0.0)).norm() < 1e-3)
            })
            .collect();
        let cl = cluster(&lpoles, radius_abs, ltried);
        if cl.is_empty() {
            return Err(LocateError::NoStableCluster { lo: opts.min_order, hi: opts.max_order });
        }
        (PoleMethod::LogDerivative, on_nearest_circle(&cl))
    };
    let primary = chosen
        .iter()
        .min_by(|a, b| a.location.norm().total_cmp(&b.location.norm()).then(a.location.arg().total_cmp(&b.location.arg())))
        .expect("nonempty")
        .clone();
    let xi_s = primary.location;

    let (disagreement, ratio_residual, ratio_converged) = match &ratio {
        Some(r) if r.converged => {
            let d = (xi_s.powi(r.stride as i32) - r.v_s).norm() / r.v_s.norm();
            (d, r.residual, true)
        }
        Some(r) => (0.0, r.residual, false),
        None => (0.0, f64::INFINITY, false),
    };
    if ratio_converged && disagreement > opts.agreement {
        return Err(LocateError::Disagree(disagreement));
    }
    let exponent = match (&ratio, method) {
        (Some(r), _) if r.converged => r.exponent.re,
        (_, PoleMethod::LogDerivative) => primary.residue.re,
        // Pole order of a plain Padé cluster.
        _ => -(primary.multiplicity as f64),
    };
    let radius = match &ratio {
        Some(r) if r.converged => r.radius.min(xi_s.norm()),
        _ => xi_s.norm(),
    };
    Ok(SingularityEstimate {
        xi_s,
        candidates: chosen.iter().map(|c| c.location).collect(),
        exponent,
        radius,
        confidence: Confidence {
            method,
            pade_drift: chosen.iter().map(|c| c.drift).fold(0.0, f64::max),
            orders_supporting: primary.orders,
            orders_tried: tried,
            ratio_residual,
            ratio_converged,
            disagreement,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::re;

    #[test]
    fn scaled_geometric() {
        // xi / (1 - xi/2)
        let c: Vec<C64> = (0..30).map(|n| if n == 0 { ZERO } else { re(0.5f64.powi(n - 1)) }).collect();
        let s = locate_series(&c, &LocateOptions::default()).unwrap();
        assert!((s.xi_s - re(2.0)).norm() < 1e-10);
        assert!((s.exponent + 1.0).abs() < 0.05);
    }

    #[test]
    fn square_root_branch_points() {
        // xi / sqrt(1 + xi^2)
        let mut c = vec![ZERO; 41];
        let mut b = 1.0;
        for k in 0..20 {
            c[2 * k + 1] = re(b);
            b *= -(k as f64 + 0.5) / (k as f64 + 1.0);
        }
        let s = locate_series(&c, &LocateOptions::default()).unwrap();
        assert_eq!(s.candidates.len(), 2);
        assert!(s.candidates.iter().any(|z| (z - C64::new(0.0, 1.0)).norm() < 1e-6));
        assert!(s.candidates.iter().any(|z| (z - C64::new(0.0, -1.0)).norm() < 1e-6));
        assert!((s.exponent + 0.5).abs() < 0.05);
    }

    #[test]
    fn entire_function_has_no_cluster() {
        let mut c = vec![ZERO, ONE];
        for n in 2..30 {
            c.push(c[n - 1] / (n - 1) as f64);
        }
        assert!(locate_series(&c, &LocateOptions::default()).is_err());
    }
}
