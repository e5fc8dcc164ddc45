//! Singularity arrays `x_n = 2 n pi i + alpha ln(2 n pi i) + ln C - ln xi_s + o(1)`,
//! connection-constant fits from detected arrays, and the Stokes constant
//! `S = C+ - C-`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::series::{C64, I, ZERO};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error("xi_s must be nonzero")]
    XiZero,
    #[error("index n = 0 needs alpha = 0 (ln 0 is undefined)")]
    ZeroIndex,
    #[error("need at least 3 indexed entries, got {0}")]
    TooFew(usize),
    #[error("o(1) residuals grow with |n| (step {index}: {prev:.3e} -> {next:.3e})")]
    ModelMismatch { index: i64, prev: f64, next: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArraySource {
    Predicted,
    Detected,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayParams {
    pub alpha: C64,
    pub ln_c: C64,
    pub xi_s: C64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub n: i64,
    pub x: C64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityArray {
    pub entries: Vec<ArrayEntry>,
    pub source: ArraySource,
    pub params: ArrayParams,
    /// Determination of the logarithms used.
    pub branch: String,
}

const BRANCH_NOTE: &str = "principal ln(2n pi i) and ln C; arg xi_s = +pi for n > 0 and -pi for n < 0 when xi_s < 0";

/// Relative size of `Im xi_s` below which `xi_s` counts as negative real.
pub const NEGATIVE_REAL_TOL: f64 = 1e-12;

/// `ln xi_s` with the array-side convention for negative real `xi_s`.
pub fn ln_xi(xi_s: C64, n: i64) -> C64 {
    // Located values carry rounding noise in Im; treat them as on the cut.
    if xi_s.re < 0.0 && xi_s.im.abs() <= NEGATIVE_REAL_TOL * xi_s.re.abs() {
        let arg = if n < 0 { -PI } else { PI };
        C64::new(xi_s.norm().ln(), arg)
    } else {
        xi_s.ln()
    }
}

fn log_term(alpha: C64, n: i64) -> C64 {
    if n == 0 {
        ZERO
    } else {
        alpha * (I * (2.0 * PI * n as f64)).ln()
    }
}

pub fn array_point(alpha: C64, ln_c: C64, xi_s: C64, n: i64) -> Result<C64, PredictError> {
    if xi_s == ZERO {
        return Err(PredictError::XiZero);
    }
    if n == 0 && alpha != ZERO {
        return Err(PredictError::ZeroIndex);
    }
    Ok(I * (2.0 * PI * n as f64) + log_term(alpha, n) + ln_c - ln_xi(xi_s, n))
}

pub fn predict_array(
    alpha: C64,
    ln_c: C64,
    xi_s: C64,
    ns: impl IntoIterator<Item = i64>,
) -> Result<SingularityArray, PredictError> {
    let mut idx: Vec<i64> = ns.into_iter().collect();
    idx.sort_unstable();
    idx.dedup();
    let entries = idx
        .into_iter()
        .map(|n| array_point(alpha, ln_c, xi_s, n).map(|x| ArrayEntry { n, x }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SingularityArray {
        entries,
        source: ArraySource::Predicted,
        params: ArrayParams { alpha, ln_c, xi_s },
        branch: BRANCH_NOTE.to_string(),
    })
}

/// Index `n` of a detected point, from `Im(x - alpha ln(2 n pi i) + ln xi_s) / 2 pi`
/// evaluated twice (the second pass uses the first estimate inside the log).
pub fn assign_index(x: C64, alpha: C64, xi_s: C64) -> i64 {
    let side = if x.im < 0.0 { -1 } else { 1 };
    let mut n = ((x + ln_xi(xi_s, side)).im / (2.0 * PI)).round() as i64;
    for _ in 0..2 {
        let guess = if n == 0 { side } else { n };
        n = ((x - log_term(alpha, guess) + ln_xi(xi_s, guess)).im / (2.0 * PI)).round() as i64;
    }
    n
}

pub fn detected_array(points: &[C64], alpha: C64, xi_s: C64) -> SingularityArray {
    let mut entries: Vec<ArrayEntry> = points.iter().map(|&x| ArrayEntry { n: assign_index(x, alpha, xi_s), x }).collect();
    entries.sort_by(|a, b| a.n.cmp(&b.n).then(a.x.re.total_cmp(&b.x.re)));
    entries.dedup_by_key(|e| e.n);
    SingularityArray {
        entries,
        source: ArraySource::Detected,
        params: ArrayParams { alpha, ln_c: ZERO, xi_s },
        branch: BRANCH_NOTE.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectionFit {
    pub ln_c: C64,
    /// Standard error of the mean.
    pub sigma: f64,
    /// `(n, v_n - ln C)` with `v_n = x_n - 2 n pi i - alpha ln(2 n pi i) + ln xi_s`.
    pub residuals: Vec<(i64, C64)>,
    /// `|v_{k+1} - v_k|` over entries ordered by `|n|`.
    pub successive: Vec<f64>,
    pub trend_decreasing: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Allowed growth of successive differences before declaring a mismatch.
    pub trend_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { trend_tol: 1e-6 }
    }
}

pub fn fit_connection_constant(
    detected: &SingularityArray,
    alpha: C64,
    xi_s: C64,
    opts: &FitOptions,
) -> Result<ConnectionFit, PredictError> {
    if xi_s == ZERO {
        return Err(PredictError::XiZero);
    }
    let mut es: Vec<ArrayEntry> = detected.entries.clone();
    if es.len() < 3 {
        return Err(PredictError::TooFew(es.len()));
    }
    es.sort_by_key(|e| (e.n.abs(), e.n));
    let v: Vec<(i64, C64)> = es
        .iter()
        .map(|e| (e.n, e.x - I * (2.0 * PI * e.n as f64) - log_term(alpha, e.n) + ln_xi(xi_s, e.n)))
        .collect();
    let k = v.len() as f64;
    let ln_c = v.iter().fold(ZERO, |s, p| s + p.1) / k;
    let var = v.iter().map(|p| (p.1 - ln_c).norm_sqr()).sum::<f64>() / (k - 1.0);
    let sigma = (var / k).sqrt();
    let successive: Vec<f64> = v.windows(2).map(|w| (w[1].1 - w[0].1).norm()).collect();
    for (i, w) in successive.windows(2).enumerate() {
        if w[1] > w[0] + opts.trend_tol {
            return Err(PredictError::ModelMismatch { index: v[i + 2].0, prev: w[0], next: w[1] });
        }
    }
    Ok(ConnectionFit {
        ln_c,
        sigma,
        residuals: v.iter().map(|p| (p.0, p.1 - ln_c)).collect(),
        successive,
        trend_decreasing: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub n: i64,
    pub predicted: C64,
    pub detected: C64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_predicted: Vec<i64>,
    pub unmatched_detected: Vec<C64>,
    pub max_residual: f64,
}

pub const MATCH_WINDOW: f64 = PI / 2.0;

/// Greedy nearest-neighbor matching within `window`.
pub fn match_arrays(predicted: &SingularityArray, detected: &[C64], window: f64) -> MatchReport {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in predicted.entries.iter().enumerate() {
        for (j, d) in detected.iter().enumerate() {
            let dist = (p.x - d).norm();
            if dist < window {
                cand.push((dist, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; predicted.entries.len()];
    let mut used_d = vec![false; detected.len()];
    let mut pairs = Vec::new();
    for (dist, i, j) in cand {
        if used_p[i] || used_d[j] {
            continue;
        }
        used_p[i] = true;
        used_d[j] = true;
        let e = predicted.entries[i];
        pairs.push(MatchedPair { n: e.n, predicted: e.x, detected: detected[j], residual: dist });
    }
    pairs.sort_by_key(|p| p.n);
    let max_residual = pairs.iter().map(|p| p.residual).fold(0.0, f64::max);
    MatchReport {
        unmatched_predicted: predicted.entries.iter().zip(&used_p).filter(|(_, u)| !**u).map(|(e, _)| e.n).collect(),
        unmatched_detected: detected.iter().zip(&used_d).filter(|(_, u)| !**u).map(|(d, _)| *d).collect(),
        pairs,
        max_residual,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideFit {
    pub ln_c: C64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StokesReport {
    /// `None` when that half plane showed no singularities (C = 0).
    pub ln_c_plus: Option<SideFit>,
    pub ln_c_minus: Option<SideFit>,
    pub c_plus: C64,
    pub c_minus: C64,
    pub s_plus: C64,
    pub sigma: f64,
}

pub fn stokes_constant(plus: Option<SideFit>, minus: Option<SideFit>) -> StokesReport {
    let side = |f: Option<SideFit>| f.map_or((ZERO, 0.0), |s| (s.ln_c.exp(), s.ln_c.exp().norm() * s.sigma));
    let (cp, sp) = side(plus);
    let (cm, sm) = side(minus);
    StokesReport {
        ln_c_plus: plus,
        ln_c_minus: minus,
        c_plus: cp,
        c_minus: cm,
        s_plus: cp - cm,
        sigma: sp.hypot(sm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::re;

    #[test]
    fn logistic_array() {
        let a = predict_array(ZERO, ZERO, re(-1.0), 1..=3).unwrap();
        for e in &a.entries {
            assert!((e.x - I * (PI * (2 * e.n - 1) as f64)).norm() < 1e-14);
        }
        let b = predict_array(ZERO, re(2.0), re(-1.0), 1..=3).unwrap();
        for e in &b.entries {
            assert!((e.x - C64::new(2.0, PI * (2 * e.n - 1) as f64)).norm() < 1e-14);
        }
        let lower = predict_array(ZERO, ZERO, re(-1.0), [-1]).unwrap();
        assert!((lower.entries[0].x + I * PI).norm() < 1e-14);
    }

    #[test]
    fn log_correction_against_newton() {
        // Solve x - ln x + ln(-1) - 2 n pi i = 0 for n = 5.
        let alpha = re(1.0);
        let n = 5;
        let pred = array_point(alpha, ZERO, re(-1.0), n).unwrap();
        let mut x = pred;
        for _ in 0..50 {
            let f = x - alpha * x.ln() + ln_xi(re(-1.0), n) - I * (2.0 * PI * n as f64);
            x -= f / (1.0 - alpha / x);
        }
        let bound = 2.0 * (alpha * (I * (2.0 * PI * n as f64)).ln()).norm() / n as f64;
        assert!((x - pred).norm() < bound);
        assert!((C64::new(0.0, 0.0) + x * (-x).exp() + 1.0).norm() < 1e-10);
    }

    #[test]
    fn errors() {
        assert_eq!(predict_array(ZERO, ZERO, ZERO, 1..=2), Err(PredictError::XiZero));
        assert_eq!(predict_array(re(1.0), ZERO, re(-1.0), 0..=2), Err(PredictError::ZeroIndex));
    }

    #[test]
    fn fit_and_translate() {
        let pts: Vec<C64> = [1.0, 3.0, 5.0].iter().map(|k| I * (k * PI)).collect();
        let d = detected_array(&pts, ZERO, re(-1.0));
        assert_eq!(d.entries.iter().map(|e| e.n).collect::<Vec<_>>(), vec![1, 2, 3]);
        let f = fit_connection_constant(&d, ZERO, re(-1.0), &FitOptions::default()).unwrap();
        assert!(f.ln_c.norm() < 1e-14);
        let shifted: Vec<C64> = pts.iter().map(|p| p + 2.0).collect();
        let d2 = detected_array(&shifted, ZERO, re(-1.0));
        let f2 = fit_connection_constant(&d2, ZERO, re(-1.0), &FitOptions::default()).unwrap();
        assert!((f2.ln_c - re(2.0)).norm() < 1e-14);
    }

    #[test]
    fn matching() {
        let p = predict_array(ZERO, ZERO, re(-1.0), 1..=4).unwrap();
        let same: Vec<C64> = p.entries.iter().map(|e| e.x).collect();
        let m = match_arrays(&p, &same, MATCH_WINDOW);
        assert_eq!(m.pairs.len(), 4);
        assert_eq!(m.max_residual, 0.0);
        let far: Vec<C64> = same.iter().map(|x| x + 10.0).collect();
        let m = match_arrays(&p, &far, MATCH_WINDOW);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_predicted.len(), 4);
    }

    #[test]
    fn stokes_arithmetic() {
        let r = stokes_constant(Some(SideFit { ln_c: ZERO, sigma: 0.0 }), None);
        assert_eq!(r.s_plus, re(1.0));
        let r = stokes_constant(
            Some(SideFit { ln_c: re(2f64.ln()), sigma: 0.0 }),
            Some(SideFit { ln_c: ZERO, sigma: 0.0 }),
        );
        assert!((r.s_plus - re(1.0)).norm() < 1e-15);
    }
}
