//! Formal transseries solutions `y = sum_k zeta^k y_k(x)`, `zeta = C e^{-x} x^alpha`.
//!
//! Each `y_k` is a formal series in `z = 1/x`. Coefficients are found by matching
//! powers of `zeta` (treated as an independent symbol) and then powers of `z`.
//! With `D_k w = (-k + alpha k z) w + dw/dx`, level `k` solves
//! `D_k^m y_k = [A(z, Y)]_k`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::eqmodel::NormalizedEquation;
use crate::series::{self, mul_trunc, C64, ONE, ZERO};

pub const DEFAULT_ORDER: usize = 12;
pub const DEFAULT_LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransseriesError {
    #[error("resonance in the recurrence at level {k}, order {j}")]
    Resonance { k: usize, j: usize },
    #[error("order must be at least 1")]
    BadOrder,
    #[error("summability gate violated: |C e^-x x^alpha| = {zeta_abs:.3e} >= {gate}")]
    NotSummable { zeta_abs: f64, gate: f64 },
    #[error("requested {requested} levels but only {available} are stored")]
    MissingLevels { requested: usize, available: usize },
}

/// `y_k = sum_j coeffs[j] x^{-j}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormalSeries {
    pub k: usize,
    pub coeffs: Vec<C64>,
}

impl FormalSeries {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, x: C64) -> C64 {
        series::eval(&self.coeffs, ONE / x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransseriesParams {
    pub c: C64,
    /// Highest exponential level summed.
    pub levels: usize,
    /// Per-level truncation index (inclusive); `None` uses everything stored.
    pub truncation: Option<usize>,
    /// Evaluation requires `|C e^{-x} x^alpha| < gate`.
    pub gate: f64,
}

impl TransseriesParams {
    pub fn new(c: C64, levels: usize) -> Self {
        Self { c, levels, truncation: None, gate: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransseriesValue {
    pub value: C64,
    /// Size of the last retained exponential term, used as an error proxy.
    pub last_term: f64,
    pub level_terms: Vec<C64>,
}

/// Coefficients of `D_k w` (a series one longer than `w`).
pub fn apply_d(k: usize, alpha: C64, w: &[C64]) -> Vec<C64> {
    let kf = k as f64;
    let mut out = vec![ZERO; w.len() + 1];
    for (j, o) in out.iter_mut().enumerate() {
        if j < w.len() {
            *o += -kf * w[j];
        }
        if j >= 1 {
            *o += (alpha * kf - (j as f64 - 1.0)) * w[j - 1];
        }
    }
    out
}

fn apply_d_pow(m: u8, k: usize, alpha: C64, w: &[C64]) -> Vec<C64> {
    let mut v = apply_d(k, alpha, w);
    if m == 2 {
        v = apply_d(k, alpha, &v);
    }
    v
}

type Bivariate = Vec<Vec<C64>>;

fn bi_mul(a: &Bivariate, b: &Bivariate, levels: usize, len: usize) -> Bivariate {
    let mut out = vec![vec![ZERO; len]; levels];
    for (ka, ra) in a.iter().enumerate() {
        for (kb, rb) in b.iter().enumerate().take(levels.saturating_sub(ka)) {
            let prod = mul_trunc(ra, rb, len);
            series::add_into(&mut out[ka + kb], &prod);
        }
    }
    out
}

/// `[A(z, Y)]` as a bivariate series, Horner in `y`.
fn eval_a_bivariate(eq: &NormalizedEquation, y: &Bivariate, levels: usize, len: usize) -> Bivariate {
    let n = eq.degree();
    let lift = |a: &[C64]| -> Bivariate {
        let mut b = vec![vec![ZERO; len]; levels];
        for (i, c) in a.iter().enumerate().take(len) {
            b[0][i] = *c;
        }
        b
    };
    let mut acc = lift(&eq.spec.coeffs[n]);
    for j in (0..n).rev() {
        acc = bi_mul(&acc, y, levels, len);
        let aj = lift(&eq.spec.coeffs[j]);
        for (r, s) in acc.iter_mut().zip(&aj) {
            series::add_into(r, s);
        }
    }
    acc
}

/// Residual `D_k^m y_k - [A(z, Y)]_k` for every level, as series of length `len`.
pub fn series_residual(eq: &NormalizedEquation, ys: &[Vec<C64>], len: usize) -> Bivariate {
    let levels = ys.len();
    let y: Bivariate = ys
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.resize(len, ZERO);
            r
        })
        .collect();
    let ay = eval_a_bivariate(eq, &y, levels, len);
    (0..levels)
        .map(|k| {
            let d = apply_d_pow(eq.m(), k, eq.alpha, &y[k]);
            (0..len).map(|j| d.get(j).copied().unwrap_or(ZERO) - ay[k][j]).collect()
        })
        .collect()
}

/// Formal series `y_0..y_K` through `x^{-order}`.
///
/// `y_1` is normalized to start with `1`. Level 1 is resonant (`D_1^m - lambda`
/// kills the leading coefficient), so its coefficient `j` is fixed by the
/// equation at order `j + 1`.
pub fn formal_series(
    eq: &NormalizedEquation,
    levels: usize,
    order: usize,
) -> Result<Vec<FormalSeries>, TransseriesError> {
    if order < 1 {
        return Err(TransseriesError::BadOrder);
    }
    let m = eq.m();
    let lambda = eq.spec.lambda();
    let a11 = eq.spec.coeffs[1].get(1).copied().unwrap_or(ZERO);
    let alpha = eq.alpha;
    let nlev = levels + 1;
    // Level 1 at order j needs level 0 at order j + 1.
    let len = order + 2;
    let mut c: Bivariate = vec![vec![ZERO; len]; nlev];
    if nlev > 1 {
        c[1][0] = ONE;
    }
    let scale = 1.0
        + eq.spec
            .coeffs
            .iter()
            .flatten()
            .fold(0.0f64, |acc, x| acc.max(x.norm()));

    let residual_at = |c: &Bivariate, k: usize, j: usize| -> C64 {
        let r = series_residual(eq, c, len);
        r[k][j]
    };

    for k in 0..nlev {
        let jmax = if k == 0 { order + 1 } else { order };
        if k == 1 {
            // Consistency of alpha with the linearization: equation (1, 1).
            let r = residual_at(&c, 1, 1);
            if r.norm() > 1e-10 * scale {
                return Err(TransseriesError::Resonance { k: 1, j: 1 });
            }
        }
        for j in 0..=jmax {
            if k == 1 && j == 0 {
                continue;
            }
            let (eq_j, divisor) = if k == 1 {
                let jf = j as f64;
                let d = if m == 1 {
                    alpha - jf - a11
                } else {
                    -2.0 * (alpha - jf) - a11
                };
                (j + 1, d)
            } else {
                let mk = (-(k as f64)).powi(m as i32);
                (j, series::re(mk) - lambda)
            };
            if divisor.norm() < 1e-12 {
                return Err(TransseriesError::Resonance { k, j });
            }
            c[k][j] = ZERO;
            let r = residual_at(&c, k, eq_j);
            c[k][j] = -r / divisor;
        }
    }
    Ok(c
        .into_iter()
        .enumerate()
        .map(|(k, mut coeffs)| {
            coeffs.truncate(order + 1);
            FormalSeries { k, coeffs }
        })
        .collect())
}

fn zeta(alpha: C64, c: C64, x: C64) -> C64 {
    if c == ZERO {
        return ZERO;
    }
    c * (-x + alpha * x.ln()).exp()
}

fn truncated(s: &FormalSeries, trunc: Option<usize>) -> &[C64] {
    let n = trunc.map_or(s.coeffs.len(), |t| (t + 1).min(s.coeffs.len()));
    &s.coeffs[..n]
}

/// Double-truncated sum `sum_{k<=K} zeta^k y_k(x)`.
pub fn evaluate_transseries(
    eq: &NormalizedEquation,
    series: &[FormalSeries],
    params: &TransseriesParams,
    x: C64,
) -> Result<TransseriesValue, TransseriesError> {
    if series.len() < params.levels + 1 {
        return Err(TransseriesError::MissingLevels {
            requested: params.levels,
            available: series.len().saturating_sub(1),
        });
    }
    let zt = zeta(eq.alpha, params.c, x);
    if zt.norm() >= params.gate {
        return Err(TransseriesError::NotSummable { zeta_abs: zt.norm(), gate: params.gate });
    }
    let z = ONE / x;
    let mut value = ZERO;
    let mut zk = ONE;
    let mut level_terms = Vec::with_capacity(params.levels + 1);
    for s in series.iter().take(params.levels + 1) {
        let t = zk * series::eval(truncated(s, params.truncation), z);
        level_terms.push(t);
        value += t;
        zk *= zt;
    }
    let last_term = level_terms.last().map_or(0.0, |t| t.norm());
    Ok(TransseriesValue { value, last_term, level_terms })
}

/// `y^(i)(x)` for `i = 0..m` of the truncated transseries (derivatives term by term).
pub fn evaluate_derivatives(
    eq: &NormalizedEquation,
    series: &[FormalSeries],
    params: &TransseriesParams,
    x: C64,
) -> Result<[C64; 3], TransseriesError> {
    // Gate and level checks
    evaluate_transseries(eq, series, params, x)?;
    let zt = zeta(eq.alpha, params.c, x);
    let z = ONE / x;
    let mut out = [ZERO; 3];
    let mut zk = ONE;
    for s in series.iter().take(params.levels + 1) {
        let w = truncated(s, params.truncation).to_vec();
        let d1 = apply_d(s.k, eq.alpha, &w);
        let d2 = apply_d(s.k, eq.alpha, &d1);
        out[0] += zk * series::eval(&w, z);
        out[1] += zk * series::eval(&d1, z);
        out[2] += zk * series::eval(&d2, z);
        zk *= zt;
    }
    Ok(out)
}

/// Pointwise ODE residual `y^(m) - A(1/x, y)` of the truncated transseries.
pub fn ode_residual(
    eq: &NormalizedEquation,
    series: &[FormalSeries],
    params: &TransseriesParams,
    x: C64,
) -> Result<C64, TransseriesError> {
    let d = evaluate_derivatives(eq, series, params, x)?;
    Ok(d[eq.m() as usize] - eq.spec.eval(ONE / x, d[0]))
}

/// CSV dump with columns `k,j,re,im`.
pub fn write_series_csv<W: Write>(out: &mut W, series: &[FormalSeries]) -> std::io::Result<()> {
    writeln!(out, "k,j,re,im")?;
    for s in series {
        for (j, c) in s.coeffs.iter().enumerate() {
            writeln!(out, "{},{},{:.16e},{:.16e}", s.k, j, c.re, c.im)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eqmodel::{normalize, parse_equation};
    use crate::series::re;

    fn eq(text: &str) -> NormalizedEquation {
        normalize(&parse_equation(text).unwrap()).unwrap()
    }

    #[test]
    fn logistic_levels() {
        let e = eq("m=1; y^1: [-1]; y^2: [1]");
        let s = formal_series(&e, 4, 6).unwrap();
        assert!(s[0].coeffs.iter().all(|c| *c == ZERO));
        assert_eq!(s[1].coeffs[0], ONE);
        assert!(s[1].coeffs[1..].iter().all(|c| c.norm() < 1e-15));
        // Ce^-x/(1+Ce^-x) = sum (-1)^{k+1} zeta^k
        for k in 1..=4 {
            assert!((s[k].coeffs[0] - re((-1f64).powi(k as i32 + 1))).norm() < 1e-14);
        }
    }

    #[test]
    fn logistic_value_at_ten() {
        let e = eq("m=1; y^1: [-1]; y^2: [1]");
        let s = formal_series(&e, 4, 12).unwrap();
        let v = evaluate_transseries(&e, &s, &TransseriesParams::new(ONE, 4), re(10.0)).unwrap();
        let exact = (-10f64).exp() / (1.0 + (-10f64).exp());
        assert!((v.value - re(exact)).norm() < 1e-15);
    }

    #[test]
    fn zero_constant_gives_level_zero_only() {
        let e = eq("m=1; y^0: [0,0,0,1]; y^1: [-1]; y^2: [1]");
        let s = formal_series(&e, 3, 8).unwrap();
        let x = re(15.0);
        let v = evaluate_transseries(&e, &s, &TransseriesParams::new(ZERO, 3), x).unwrap();
        assert_eq!(v.value, s[0].eval(x));
    }

    #[test]
    fn soliton_matches_closed_form() {
        let e = eq("m=2; y^1: [1]; y^2: [-1]");
        let s = formal_series(&e, 6, 4).unwrap();
        let x = re(12.0);
        let v = evaluate_transseries(&e, &s, &TransseriesParams::new(ONE, 6), x).unwrap();
        let xi = (-12f64).exp();
        let f0 = 36.0 * xi / (6.0 + xi).powi(2);
        assert!((v.value - re(f0)).norm() < 1e-8);
    }

    #[test]
    fn gate_rejects_large_zeta() {
        let e = eq("m=1; y^1: [-1]; y^2: [1]");
        let s = formal_series(&e, 2, 4).unwrap();
        let r = evaluate_transseries(&e, &s, &TransseriesParams::new(ONE, 2), re(-1.0));
        assert!(matches!(r, Err(TransseriesError::NotSummable { .. })));
    }

    #[test]
    fn series_residual_vanishes() {
        let e = eq("m=2; y^0: [0,0,0,0.5]; y^1: [1, 0.3, -0.2]; y^2: [-1, 0.1]; y^3: [0.4]");
        let s = formal_series(&e, 4, 8).unwrap();
        let ys: Vec<Vec<C64>> = s.iter().map(|f| f.coeffs.clone()).collect();
        let r = series_residual(&e, &ys, 9);
        for (k, row) in r.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                // level 1 is determined one order later, so its last order is free
                if k == 1 && j == 9 {
                    continue;
                }
                assert!(x.norm() < 1e-9, "k={k} j={j} r={x}");
            }
        }
    }

    #[test]
    fn flipped_alpha_is_resonant() {
        use crate::eqmodel::{normalize_with, AlphaSign, NormalizeOptions};
        let spec = parse_equation("m=1; y^1: [-1, 0.5]; y^2: [1]").unwrap();
        let e = normalize_with(&spec, &NormalizeOptions { alpha_sign: AlphaSign::Minus }).unwrap();
        assert_eq!(formal_series(&e, 2, 4), Err(TransseriesError::Resonance { k: 1, j: 1 }));
    }

    #[test]
    fn level_homogeneity() {
        let e = eq("m=1; y^0: [0,0,0,1]; y^1: [-1, 0.25]; y^2: [1]");
        let s = formal_series(&e, 4, 6).unwrap();
        let x = C64::new(14.0, 3.0);
        let t = C64::new(0.7, 0.4);
        let base = evaluate_transseries(&e, &s, &TransseriesParams::new(ONE, 4), x).unwrap();
        let scaled = evaluate_transseries(&e, &s, &TransseriesParams::new(t, 4), x).unwrap();
        for k in 0..=4 {
            let want = base.level_terms[k] * t.powi(k as i32);
            assert!((scaled.level_terms[k] - want).norm() <= 1e-14 * want.norm().max(1e-300));
        }
    }
}
