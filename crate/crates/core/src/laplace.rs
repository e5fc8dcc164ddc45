//! Laplace transforms on the half line, Bromwich inversion, and classification
//! of how fast a transform decays.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::quadrature::{self, QuadOptions};
use crate::series::{self, C64, ZERO};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LaplaceError {
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("inversion needs p > 0, got {0}")]
    BadPoint(f64),
    #[error("integrand tail does not decay (last piece [{from}, {to}] contributed {contribution:.3e})")]
    TailDivergent { from: f64, to: f64, contribution: f64 },
    #[error("majorant tail too slow: truncation would need |t| > {0:.3e}")]
    SlowTail(f64),
    #[error("need at least 8 grid points spanning a decade")]
    ThinGrid,
    #[error("sample is not decaying")]
    NotDecaying,
    #[error("sample value vanishes or is not finite at x = {0}")]
    BadValue(f64),
    #[error("bad grid literal {0:?} (expected x0:x1:n)")]
    BadGrid(String),
    #[error("unknown Laplace preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceValue {
    pub value: C64,
    pub error: f64,
}

const MAX_REACH: f64 = 1e12;

/// `int_0^inf e^{-px} F(p) dp`, integrated piecewise over `[0, L]`, `[L, 2L]`, ...
/// until two consecutive pieces fall below `tol`. `knots` marks points where
/// `F` is not smooth.
pub fn laplace_quadrature_with<F: Fn(f64) -> C64>(
    f: &F,
    x: f64,
    knots: &[f64],
    tol: f64,
) -> Result<LaplaceValue, LaplaceError> {
    if tol.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(LaplaceError::BadTolerance);
    }
    let g = |p: f64| if p == 0.0 { f(0.0) } else { f(p) * (-p * x).exp() };
    let opts = QuadOptions { abs_tol: 0.25 * tol, rel_tol: 1e-13, max_panels: 4000 };
    let last_knot = knots.iter().copied().fold(0.0, f64::max);
    let mut hi = last_knot.max(1.0);
    let head = quadrature::integrate(&g, 0.0, hi, knots, &opts);
    let mut value = head.value;
    let mut error = head.error;
    let mut quiet = 0;
    let mut growing = 0;
    let mut prev = f64::INFINITY;
    while quiet < 2 {
        let lo = hi;
        hi *= 2.0;
        if hi > MAX_REACH {
            return Err(LaplaceError::TailDivergent { from: lo, to: hi, contribution: prev });
        }
        let piece = quadrature::integrate(&g, lo, hi, knots, &opts);
        if !piece.value.re.is_finite() || !piece.value.im.is_finite() {
            return Err(LaplaceError::TailDivergent { from: lo, to: hi, contribution: f64::INFINITY });
        }
        value += piece.value;
        error += piece.error;
        let size = piece.value.norm() + piece.error;
        // Past x L = 40 the kernel alone would crush any F of sub-exponential growth.
        if size >= prev && x * lo > 40.0 && size > tol {
            growing += 1;
            if growing >= 4 {
                return Err(LaplaceError::TailDivergent { from: lo, to: hi, contribution: size });
            }
        } else {
            growing = 0;
        }
        prev = size;
        quiet = if size <= tol.max(1e-14 * value.norm()) { quiet + 1 } else { 0 };
    }
    Ok(LaplaceValue { value, error })
}

pub fn laplace_quadrature<F: Fn(f64) -> C64>(f: &F, x: f64, tol: f64) -> Result<LaplaceValue, LaplaceError> {
    laplace_quadrature_with(f, x, &[], tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BromwichValue {
    pub value: C64,
    pub error: f64,
    /// Truncation `|t| <= t_max` of the vertical line.
    pub t_max: f64,
}

/// `(1/2 pi i) int_{c - i inf}^{c + i inf} e^{p z} f(z) dz` along `Re z = c`.
///
/// `majorant(t)` must bound `|f(c' + i t)|` for all `c' >= c` and decrease in
/// `|t|`. The cut is placed where the oscillatory tail bound
/// `e^{pc} / pi * 2 g(T) / p` falls below half of `tol`.
pub fn inverse_laplace_contour<F, G>(f: &F, majorant: &G, c: f64, p: f64, tol: f64) -> Result<BromwichValue, LaplaceError>
where
    F: Fn(C64) -> C64,
    G: Fn(f64) -> f64,
{
    if tol.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(LaplaceError::BadTolerance);
    }
    if p.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(LaplaceError::BadPoint(p));
    }
    let scale = (p * c).exp() / PI;
    let tail = |t: f64| scale * 2.0 * majorant(t) / p;
    let mut t_max = 1.0f64;
    while tail(t_max) > 0.5 * tol {
        t_max *= 2.0;
        if t_max > 1e9 {
            return Err(LaplaceError::SlowTail(t_max));
        }
    }
    // Chunks of one period of e^{ipt} keep each adaptive run short.
    let chunk = (2.0 * PI / p).min(t_max);
    let count = (t_max / chunk).ceil() as usize;
    let opts = QuadOptions { abs_tol: 0.25 * tol / (2.0 * count as f64), rel_tol: 1e-14, max_panels: 400 };
    let g = |t: f64| {
        let z = C64::new(c, t);
        (z * p).exp() * f(z)
    };
    let mut value = ZERO;
    let mut error = tail(t_max);
    for k in 0..count {
        let a = k as f64 * chunk;
        let b = ((k + 1) as f64 * chunk).min(t_max);
        let up = quadrature::integrate(&g, a, b, &[], &opts);
        let down = quadrature::integrate(&g, -b, -a, &[], &opts);
        value += up.value + down.value;
        error += (up.error + down.error) / (2.0 * PI);
    }
    Ok(BromwichValue { value: value / (2.0 * PI), error, t_max })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplaceSample {
    pub grid: Vec<f64>,
    pub values: Vec<C64>,
    pub errors: Vec<f64>,
}

/// Transform evaluated on `grid` in parallel.
pub fn laplace_sample<F: Fn(f64) -> C64 + Sync>(
    f: &F,
    knots: &[f64],
    grid: &[f64],
    tol: f64,
) -> Result<LaplaceSample, LaplaceError> {
    let vals: Vec<LaplaceValue> = grid
        .par_iter()
        .map(|&x| laplace_quadrature_with(f, x, knots, tol))
        .collect::<Result<_, _>>()?;
    Ok(LaplaceSample {
        grid: grid.to_vec(),
        values: vals.iter().map(|v| v.value).collect(),
        errors: vals.iter().map(|v| v.error).collect(),
    })
}

/// Geometric grid from `"x0:x1:n"`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, LaplaceError> {
    let bad = || LaplaceError::BadGrid(text.to_string());
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let x0: f64 = parts[0].parse().map_err(|_| bad())?;
    let x1: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if !(x0 > 0.0 && x1 > x0 && n >= 2) {
        return Err(bad());
    }
    Ok(geometric_grid(x0, x1, n))
}

pub fn geometric_grid(x0: f64, x1: f64, n: usize) -> Vec<f64> {
    let r = (x1 / x0).ln() / (n - 1) as f64;
    (0..n).map(|k| if k + 1 == n { x1 } else { x0 * (r * k as f64).exp() }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DecayModel {
    /// `e^{-rate x}`.
    Exponential { rate: f64 },
    /// `e^{-b x^gamma}`.
    Stretched { b: f64, gamma: f64 },
    /// `e^{-a x ln x}`: faster than any exponential.
    SuperExponential { a: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: DecayModel,
    /// Power `beta` of the algebraic prefactor `x^beta`.
    pub prefactor: f64,
    /// RMS residual of `ln|LF|` for the selected model.
    pub residual: f64,
    pub exponential_residual: f64,
    pub stretched_residual: f64,
    pub super_residual: f64,
    /// Exponential rates fitted separately on the lower and upper half of the grid.
    pub local_rates: (f64, f64),
}

const GAMMA_GRID: [f64; 14] = [0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

fn fit_basis(xs: &[f64], ls: &[f64], basis: &dyn Fn(f64) -> Vec<f64>) -> Option<(Vec<f64>, f64)> {
    let rows: Vec<Vec<f64>> = xs.iter().map(|&x| basis(x)).collect();
    let c = series::lstsq_real(&rows, ls)?;
    let rms = (rows
        .iter()
        .zip(ls)
        .map(|(r, l)| (l - r.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()).powi(2))
        .sum::<f64>()
        / ls.len() as f64)
        .sqrt();
    Some((c, rms))
}

fn exponential_fit(xs: &[f64], ls: &[f64]) -> Option<(Vec<f64>, f64)> {
    fit_basis(xs, ls, &|x| vec![1.0, x, x.ln(), 1.0 / x])
}

fn stretched_fit(xs: &[f64], ls: &[f64], gamma: f64) -> Option<(Vec<f64>, f64)> {
    fit_basis(xs, ls, &|x| vec![1.0, x.powf(gamma), x.ln(), 1.0 / x])
}

/// Fit `ln|LF|` by `c - eps x + beta ln x + d / x`, by `c - b x^gamma + beta ln x + d / x` over
/// the gamma grid (refined by golden section), and by a form with an extra
/// `x ln x` term. The super-exponential form wins only when its slope is
/// clearly positive and it beats the others tenfold.
pub fn decay_rate_fit(sample: &LaplaceSample) -> Result<DecayFit, LaplaceError> {
    let xs = &sample.grid;
    if xs.len() < 8 || xs.windows(2).any(|w| w[1] <= w[0]) || xs[xs.len() - 1] < 10.0 * xs[0] {
        return Err(LaplaceError::ThinGrid);
    }
    let mut ls = Vec::with_capacity(xs.len());
    for (x, v) in xs.iter().zip(&sample.values) {
        let a = v.norm();
        if a == 0.0 || !a.is_finite() {
            return Err(LaplaceError::BadValue(*x));
        }
        ls.push(a.ln());
    }
    if ls[ls.len() - 1] >= ls[0] {
        return Err(LaplaceError::NotDecaying);
    }
    let degenerate = || LaplaceError::NotDecaying;
    let (ce, re_) = exponential_fit(xs, &ls).ok_or_else(degenerate)?;

    let score = |g: f64| stretched_fit(xs, &ls, g).map_or(f64::INFINITY, |f| f.1);
    let coarse = GAMMA_GRID.iter().copied().min_by(|a, b| score(*a).total_cmp(&score(*b))).expect("grid");
    let (mut a, mut b) = ((coarse - 0.05).max(0.30), (coarse + 0.05).min(0.975));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if score(c) < score(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let gamma = 0.5 * (a + b);
    let (cs, rs) = stretched_fit(xs, &ls, gamma).ok_or_else(degenerate)?;

    let (cx, rx) = fit_basis(xs, &ls, &|x| vec![1.0, x * x.ln(), x, x.ln(), 1.0 / x]).ok_or_else(degenerate)?;

    let half = xs.len() / 2;
    let lo = exponential_fit(&xs[..half.max(3)], &ls[..half.max(3)]).map_or(f64::NAN, |f| -f.0[1]);
    let hi = exponential_fit(&xs[half.min(xs.len() - 3)..], &ls[half.min(xs.len() - 3)..]).map_or(f64::NAN, |f| -f.0[1]);

    let best_other = re_.min(rs);
    let (model, prefactor, residual) = if -cx[1] > 0.1 && rx * 10.0 < best_other {
        (DecayModel::SuperExponential { a: -cx[1] }, cx[3], rx)
    } else if rs < re_ && gamma < 0.97 {
        (DecayModel::Stretched { b: -cs[1], gamma }, cs[2], rs)
    } else {
        (DecayModel::Exponential { rate: -ce[1] }, ce[2], re_)
    };
    Ok(DecayFit {
        model,
        prefactor,
        residual,
        exponential_residual: re_,
        stretched_residual: rs,
        super_residual: rx,
        local_rates: (lo, hi),
    })
}

/// Transform pairs used by the demos and the decay tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaplacePreset {
    /// `1_{[1, inf)}(p) e^{-p}`, transform `e^{-(x+1)} / (x+1)`.
    ShiftedExponential,
    /// `1_{[2, 3]}(p)`, transform `(e^{-2x} - e^{-3x}) / x`.
    ShiftedBox,
    /// `1_{[0, 1]}(p)`, transform `(1 - e^{-x}) / x`.
    UnitBox,
    /// `e^{-1/p}`, transform `~ sqrt(pi) x^{-3/4} e^{-2 sqrt x}`.
    Essential,
    /// `p e^{-p}`, the inverse of `1 / (1 + x)^2`.
    Ramp,
    /// `1 / Gamma(x)` sampled directly (not a transform).
    ReciprocalGamma,
}

impl LaplacePreset {
    pub const ALL: [LaplacePreset; 6] = [
        LaplacePreset::ShiftedExponential,
        LaplacePreset::ShiftedBox,
        LaplacePreset::UnitBox,
        LaplacePreset::Essential,
        LaplacePreset::Ramp,
        LaplacePreset::ReciprocalGamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LaplacePreset::ShiftedExponential => "shifted-exponential",
            LaplacePreset::ShiftedBox => "shifted-box",
            LaplacePreset::UnitBox => "unit-box",
            LaplacePreset::Essential => "essential",
            LaplacePreset::Ramp => "ramp",
            LaplacePreset::ReciprocalGamma => "reciprocal-gamma",
        }
    }

    pub fn by_name(name: &str) -> Result<Self, LaplaceError> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| LaplaceError::UnknownPreset(name.to_string()))
    }

    /// Largest `eps` with `F = 0` on `[0, eps]`.
    pub fn vanishes_up_to(self) -> f64 {
        match self {
            LaplacePreset::ShiftedExponential => 1.0,
            LaplacePreset::ShiftedBox => 2.0,
            _ => 0.0,
        }
    }

    pub fn knots(self) -> Vec<f64> {
        match self {
            LaplacePreset::ShiftedExponential | LaplacePreset::UnitBox => vec![1.0],
            LaplacePreset::ShiftedBox => vec![2.0, 3.0],
            _ => vec![],
        }
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            LaplacePreset::Essential => geometric_grid(10.0, 1000.0, 24),
            LaplacePreset::ReciprocalGamma => geometric_grid(2.0, 60.0, 24),
            _ => geometric_grid(2.0, 40.0, 16),
        }
    }

    pub fn density(self, p: f64) -> C64 {
        let v = match self {
            LaplacePreset::ShiftedExponential => {
                if p >= 1.0 {
                    (-p).exp()
                } else {
                    0.0
                }
            }
            LaplacePreset::ShiftedBox => {
                if (2.0..=3.0).contains(&p) {
                    1.0
                } else {
                    0.0
                }
            }
            LaplacePreset::UnitBox => {
                if p <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            LaplacePreset::Essential => {
                if p > 0.0 {
                    (-1.0 / p).exp()
                } else {
                    0.0
                }
            }
            LaplacePreset::Ramp => p * (-p).exp(),
            LaplacePreset::ReciprocalGamma => 0.0,
        };
        C64::new(v, 0.0)
    }

    /// Sample on `grid`: transforms by quadrature, `1/Gamma` by `ln Gamma`.
    pub fn sample(self, grid: &[f64], tol: f64) -> Result<LaplaceSample, LaplaceError> {
        if self == LaplacePreset::ReciprocalGamma {
            return Ok(LaplaceSample {
                grid: grid.to_vec(),
                values: grid.iter().map(|&x| C64::new((-statrs::function::gamma::ln_gamma(x)).exp(), 0.0)).collect(),
                errors: vec![0.0; grid.len()],
            });
        }
        laplace_sample(&|p| self.density(p), &self.knots(), grid, tol)
    }
}

/// `1 / (1 + z)^2` and its majorant on `Re z >= c > -1`.
pub fn rational_pair(c: f64) -> (impl Fn(C64) -> C64 + Sync, impl Fn(f64) -> f64 + Sync) {
    let f = |z: C64| {
        let w = z + 1.0;
        1.0 / (w * w)
    };
    let g = move |t: f64| 1.0 / ((1.0 + c).powi(2) + t * t);
    (f, g)
}

/// `F(p) = e^{-1/p}` transform via its saddle point, `sqrt(pi) x^{-3/4} e^{-2 sqrt x}`.
pub fn essential_saddle(x: f64) -> f64 {
    PI.sqrt() * x.powf(-0.75) * (-2.0 * x.sqrt()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::re;

    #[test]
    fn shifted_exponential_closed_form() {
        let v = laplace_quadrature_with(&|p| LaplacePreset::ShiftedExponential.density(p), 3.0, &[1.0], 1e-14).unwrap();
        assert!((v.value - re((-4.0f64).exp() / 4.0)).norm() < 1e-13);
    }

    #[test]
    fn unit_box() {
        let v = laplace_quadrature_with(&|p| LaplacePreset::UnitBox.density(p), 2.0, &[1.0], 1e-14).unwrap();
        assert!((v.value - re((1.0 - (-2.0f64).exp()) / 2.0)).norm() < 1e-13);
    }

    #[test]
    fn essential_against_saddle() {
        let v = laplace_quadrature(&|p| LaplacePreset::Essential.density(p), 100.0, 1e-300).unwrap();
        let s = essential_saddle(100.0);
        assert!((v.value.re / s - 1.0).abs() < 0.05, "{} vs {}", v.value.re, s);
    }

    #[test]
    fn growing_density_is_rejected() {
        let r = laplace_quadrature(&|p| re((2.0 * p).exp()), 1.0, 1e-10);
        assert!(matches!(r, Err(LaplaceError::TailDivergent { .. })));
    }

    #[test]
    fn bromwich_pair() {
        let (f, g) = rational_pair(1.0);
        let v = inverse_laplace_contour(&f, &g, 1.0, 2.0, 1e-9).unwrap();
        assert!((v.value - re(2.0 * (-2.0f64).exp())).norm() < 1e-8, "{:?}", v);
        let zero = inverse_laplace_contour(&|_| ZERO, &|_| 0.0, 1.0, 2.0, 1e-9).unwrap();
        assert_eq!(zero.value, ZERO);
    }

    #[test]
    fn grid_literal() {
        let g = parse_grid("1:100:3").unwrap();
        assert!((g[1] - 10.0).abs() < 1e-12);
        assert!(parse_grid("1:100").is_err());
        assert!(parse_grid("5:1:4").is_err());
    }

    fn fit(p: LaplacePreset) -> DecayFit {
        decay_rate_fit(&p.sample(&p.default_grid(), 1e-300).unwrap()).unwrap()
    }

    #[test]
    fn decay_models() {
        let a = fit(LaplacePreset::ShiftedExponential);
        let DecayModel::Exponential { rate } = a.model else { panic!("{a:?}") };
        assert!((rate - 1.0).abs() < 0.02, "{a:?}");
        let b = fit(LaplacePreset::Essential);
        let DecayModel::Stretched { gamma, .. } = b.model else { panic!("{b:?}") };
        assert!((gamma - 0.5).abs() < 0.05, "{b:?}");
        let c = fit(LaplacePreset::ReciprocalGamma);
        assert!(matches!(c.model, DecayModel::SuperExponential { .. }), "{c:?}");
        assert!(c.local_rates.1 > c.local_rates.0);
        let d = fit(LaplacePreset::ShiftedBox);
        let DecayModel::Exponential { rate } = d.model else { panic!("{d:?}") };
        assert!(rate >= 2.0 * 0.98, "{d:?}");
        println!("{a:?}\n{b:?}\n{c:?}\n{d:?}");
    }
}
