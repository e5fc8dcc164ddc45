//! Equations `y^(m) = A(1/x, y)` with `A` polynomial in `y` and truncated in `z = 1/x`.
//!
//! An [`EquationSpec`] is what the user writes down. [`normalize`] turns it into a
//! [`NormalizedEquation`]: a shift `y -> y + a + b z + c z^2` removes the `z^0..z^2`
//! part of `A(z, 0)`, and a rescaling of `x` makes `dA/dy(0,0) = (-1)^m`. The
//! normalized equation also carries `alpha`, the power in the decaying
//! linearized solution `x^alpha e^{-x}`.

use serde::{Deserialize, Serialize};

use crate::literal::{parse_complex, LiteralError};
use crate::series::{self, binomial, mul_trunc, C64, ONE, ZERO};

pub const DEFAULT_Z_ORDER: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EquationError {
    #[error("missing key `m`")]
    MissingOrder,
    #[error("order m must be 1 or 2, got {0}")]
    BadOrder(String),
    #[error("malformed entry `{0}`")]
    Malformed(String),
    #[error(transparent)]
    Literal(#[from] LiteralError),
    #[error("y-degree N must be at least 1")]
    ZeroDegree,
    #[error("coefficient of the leading y-degree {0} is identically zero")]
    ZeroLeading(usize),
    #[error("series for y^{degree} has {len} terms, more than z_order = {z_order}")]
    SeriesTooLong { degree: usize, len: usize, z_order: usize },
    #[error("degenerate linearization: dA/dy(0, a) = 0")]
    Degenerate,
    #[error("shift solve did not converge (residual {0:e})")]
    ShiftDiverged(f64),
}

/// `y^(m) = sum_j a_j(z) y^j`, each `a_j` a truncated series of `z_order` terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationSpec {
    pub m: u8,
    pub coeffs: Vec<Vec<C64>>,
    pub z_order: usize,
}

impl EquationSpec {
    pub fn new(m: u8, coeffs: Vec<Vec<C64>>, z_order: usize) -> Result<Self, EquationError> {
        if m != 1 && m != 2 {
            return Err(EquationError::BadOrder(m.to_string()));
        }
        let mut coeffs = coeffs;
        for (degree, c) in coeffs.iter_mut().enumerate() {
            if c.len() > z_order {
                return Err(EquationError::SeriesTooLong { degree, len: c.len(), z_order });
            }
            c.resize(z_order, ZERO);
        }
        if coeffs.len() < 2 {
            return Err(EquationError::ZeroDegree);
        }
        let n = coeffs.len() - 1;
        if coeffs[n].iter().all(|c| *c == ZERO) {
            return Err(EquationError::ZeroLeading(n));
        }
        Ok(Self { m, coeffs, z_order })
    }

    /// The y-degree `N`.
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn lambda(&self) -> C64 {
        self.coeffs[1][0]
    }

    /// `A(z, y)`.
    pub fn eval(&self, z: C64, y: C64) -> C64 {
        self.coeffs
            .iter()
            .rev()
            .fold(ZERO, |acc, a| acc * y + series::eval(a, z))
    }

    /// `dA/dy (z, y)`.
    pub fn dy(&self, z: C64, y: C64) -> C64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(ZERO, |acc, (j, a)| acc * y + series::eval(a, z) * j as f64)
    }

    /// `dA/dz (z, y)`.
    pub fn dz(&self, z: C64, y: C64) -> C64 {
        self.coeffs
            .iter()
            .rev()
            .fold(ZERO, |acc, a| acc * y + series::eval_with_derivative(a, z).1)
    }

    /// `H = A(0, .)` as ascending coefficients in `y`.
    pub fn h_poly(&self) -> Vec<C64> {
        self.coeffs.iter().map(|a| a[0]).collect()
    }

    /// Bivariate Horner expansion of `A(z, y + s(z))` for a series `s`,
    /// truncated at `z_order`. Used to cross-check the binomial route of
    /// [`normalize`].
    pub fn shifted_by_horner(&self, s: &[C64]) -> Vec<Vec<C64>> {
        let len = self.z_order;
        let n = self.degree();
        // acc[i] is the coefficient series of y^i
        let mut acc: Vec<Vec<C64>> = vec![self.coeffs[n].clone()];
        for j in (0..n).rev() {
            // acc <- acc * (y + s) + a_j
            let mut next = vec![vec![ZERO; len]; acc.len() + 1];
            for (i, ci) in acc.iter().enumerate() {
                series::add_into(&mut next[i + 1], ci);
                series::add_into(&mut next[i], &mul_trunc(ci, s, len));
            }
            series::add_into(&mut next[0], &self.coeffs[j]);
            acc = next;
        }
        acc
    }
}

/// Parse the key-value equation format:
///
/// ```text
/// m = 1
/// y^1: [-1]
/// y^2: [1]
/// ```
///
/// Entries may be separated by newlines or `;`. `#` starts a comment.
pub fn parse_equation(text: &str) -> Result<EquationSpec, EquationError> {
    let mut m: Option<u8> = None;
    let mut z_order: Option<usize> = None;
    let mut degrees: Vec<(usize, Vec<C64>)> = Vec::new();
    for raw in text.split(['\n', ';']) {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some(pos) = line.find([':', '=']) else {
            return Err(EquationError::Malformed(line.to_string()));
        };
        let key = line[..pos].trim();
        let value = line[pos + 1..].trim();
        match key {
            "m" => {
                m = Some(match value {
                    "1" => 1,
                    "2" => 2,
                    other => return Err(EquationError::BadOrder(other.to_string())),
                })
            }
            "z_order" => {
                z_order = Some(
                    value
                        .parse()
                        .map_err(|_| EquationError::Malformed(line.to_string()))?,
                )
            }
            k if k.starts_with("y^") => {
                let degree: usize = k[2..]
                    .trim()
                    .parse()
                    .map_err(|_| EquationError::Malformed(line.to_string()))?;
                let inner = value
                    .strip_prefix('[')
                    .and_then(|v| v.strip_suffix(']'))
                    .ok_or_else(|| EquationError::Malformed(line.to_string()))?;
                let series = inner
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(parse_complex)
                    .collect::<Result<Vec<_>, _>>()?;
                if series.is_empty() {
                    return Err(EquationError::Malformed(line.to_string()));
                }
                degrees.push((degree, series));
            }
            _ => return Err(EquationError::Malformed(line.to_string())),
        }
    }
    let m = m.ok_or(EquationError::MissingOrder)?;
    let max_degree = degrees.iter().map(|(d, _)| *d).max().unwrap_or(0);
    if max_degree == 0 {
        return Err(EquationError::ZeroDegree);
    }
    let longest = degrees.iter().map(|(_, s)| s.len()).max().unwrap_or(1);
    let z_order = z_order.unwrap_or(DEFAULT_Z_ORDER.max(longest));
    let mut coeffs = vec![Vec::new(); max_degree + 1];
    for (d, s) in degrees {
        coeffs[d] = s;
    }
    EquationSpec::new(m, coeffs, z_order)
}

pub fn format_equation(spec: &EquationSpec) -> String {
    let mut out = format!("m = {}\nz_order = {}\n", spec.m, spec.z_order);
    for (j, c) in spec.coeffs.iter().enumerate() {
        let last = c.iter().rposition(|x| *x != ZERO);
        let Some(last) = last else { continue };
        let items: Vec<String> = c[..=last]
            .iter()
            .map(|x| crate::literal::format_complex(*x))
            .collect();
        out.push_str(&format!("y^{j}: [{}]\n", items.join(", ")));
    }
    out
}

/// Sign applied to the operational `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AlphaSign {
    #[default]
    Plus,
    Minus,
}

impl AlphaSign {
    pub fn factor(self) -> f64 {
        match self {
            AlphaSign::Plus => 1.0,
            AlphaSign::Minus => -1.0,
        }
    }
}

/// `y_old = y_new + a + b z + c z^2` in the original variable, followed by
/// `x_old = x_scale * x_new`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub a: C64,
    pub b: C64,
    pub c: C64,
    pub x_scale: C64,
}

impl Shift {
    pub fn identity() -> Self {
        Self { a: ZERO, b: ZERO, c: ZERO, x_scale: ONE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedEquation {
    pub spec: EquationSpec,
    pub lambda: C64,
    pub alpha: C64,
    pub shift: Shift,
    pub alpha_sign: AlphaSign,
}

impl NormalizedEquation {
    pub fn m(&self) -> u8 {
        self.spec.m
    }

    pub fn degree(&self) -> usize {
        self.spec.degree()
    }

    /// Leading singularity exponent `m / (1 - N)` for polynomial `H` of degree `N`.
    pub fn theoretical_exponent(&self) -> f64 {
        let n = self.h_degree().unwrap_or(self.degree());
        self.m() as f64 / (1.0 - n as f64)
    }

    /// Degree of `H = A(0, .)`, or `None` when `H` is linear or zero.
    pub fn h_degree(&self) -> Option<usize> {
        let h = self.spec.h_poly();
        let d = h.iter().rposition(|c| *c != ZERO)?;
        (d > 1).then_some(d)
    }

    /// The pair `(x, y)` of the original equation for a point of the normalized one.
    pub fn to_original(&self, x: C64, y: C64) -> (C64, C64) {
        let xo = self.shift.x_scale * x;
        let z = ONE / xo;
        (xo, y + self.shift.a + self.shift.b * z + self.shift.c * z * z)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizeOptions {
    pub alpha_sign: AlphaSign,
}

/// Shift and rescale `spec` into normal form. See the module docs.
pub fn normalize(spec: &EquationSpec) -> Result<NormalizedEquation, EquationError> {
    normalize_with(spec, &NormalizeOptions::default())
}

pub fn normalize_with(
    spec: &EquationSpec,
    opts: &NormalizeOptions,
) -> Result<NormalizedEquation, EquationError> {
    let (a, b, c) = solve_shift(spec)?;
    let s = vec![a, b, c];
    let mut coeffs = shifted_binomial(spec, &s);
    subtract_shift_derivative(&mut coeffs[0], spec.m, b, c);
    coeffs[0].iter_mut().take(3).for_each(|x| *x = ZERO);

    let lambda_shifted = coeffs[1][0];
    if lambda_shifted.norm() < 1e-14 {
        return Err(EquationError::Degenerate);
    }
    let target = if spec.m == 1 { -ONE } else { ONE };
    // x_old = mu * x_new multiplies A by mu^m and z^i by mu^-i.
    let mu = if spec.m == 1 {
        -ONE / lambda_shifted
    } else {
        (ONE / lambda_shifted).sqrt()
    };
    if (mu - ONE).norm() > 0.0 {
        let mu_m = mu.powi(spec.m as i32);
        for row in coeffs.iter_mut() {
            let mut scale = mu_m;
            for x in row.iter_mut() {
                *x *= scale;
                scale /= mu;
            }
        }
    }
    coeffs[1][0] = target;

    let normalized = EquationSpec { m: spec.m, coeffs, z_order: spec.z_order };
    let a11 = normalized.coeffs[1].get(1).copied().unwrap_or(ZERO);
    // y ~ x^alpha e^{-x}: m = 1 gives y'/y = -1 + alpha/x, m = 2 gives
    // y''/y = 1 - 2 alpha/x.
    let alpha_op = if spec.m == 1 { a11 } else { -a11 / 2.0 };
    Ok(NormalizedEquation {
        spec: normalized,
        lambda: target,
        alpha: alpha_op * opts.alpha_sign.factor(),
        shift: Shift { a, b, c, x_scale: mu },
        alpha_sign: opts.alpha_sign,
    })
}

/// Reapply a recorded shift to the original equation through the Horner route.
pub fn apply_shift(spec: &EquationSpec, shift: &Shift) -> EquationSpec {
    let s = vec![shift.a, shift.b, shift.c];
    let mut coeffs = spec.shifted_by_horner(&s);
    subtract_shift_derivative(&mut coeffs[0], spec.m, shift.b, shift.c);
    let mu = shift.x_scale;
    let mu_m = mu.powi(spec.m as i32);
    for row in coeffs.iter_mut() {
        let mut scale = mu_m;
        for x in row.iter_mut() {
            *x *= scale;
            scale /= mu;
        }
    }
    EquationSpec { m: spec.m, coeffs, z_order: spec.z_order }
}

// s = a + b z + c z^2 with z = 1/x:
//   s'  = -b z^2 - 2c z^3
//   s'' = 2b z^3 + 6c z^4
fn subtract_shift_derivative(y0: &mut [C64], m: u8, b: C64, c: C64) {
    let terms: &[(usize, C64)] = &if m == 1 {
        [(2, b), (3, 2.0 * c)]
    } else {
        [(3, -2.0 * b), (4, -6.0 * c)]
    };
    for &(i, v) in terms {
        if let Some(x) = y0.get_mut(i) {
            *x += v;
        }
    }
}

fn shifted_binomial(spec: &EquationSpec, s: &[C64]) -> Vec<Vec<C64>> {
    let len = spec.z_order;
    let n = spec.degree();
    let mut s_pow = vec![vec![ONE]];
    for k in 1..=n {
        let prev = s_pow[k - 1].clone();
        s_pow.push(mul_trunc(&prev, s, len));
    }
    (0..=n)
        .map(|i| {
            let mut acc = vec![ZERO; len];
            for j in i..=n {
                let t = mul_trunc(&spec.coeffs[j], &s_pow[j - i], len);
                let w = binomial(j, i);
                for (a, x) in acc.iter_mut().zip(t) {
                    *a += x * w;
                }
            }
            acc
        })
        .collect()
}

/// Newton iteration for `(a, b, c)` killing the `z^0, z^1, z^2` coefficients of
/// `A(z, s(z)) - s^(m)`, seeded at the root of `A(0, .)` nearest the origin.
fn solve_shift(spec: &EquationSpec) -> Result<(C64, C64, C64), EquationError> {
    let h = spec.h_poly();
    let seed = if h[0] == ZERO {
        ZERO
    } else {
        series::poly_roots(&h)
            .into_iter()
            .min_by(|p, q| p.norm().total_cmp(&q.norm()))
            .ok_or(EquationError::Degenerate)?
    };
    let mut u = [seed, ZERO, ZERO];
    let residual = |u: &[C64; 3]| -> [C64; 3] {
        let s = vec![u[0], u[1], u[2]];
        let y0 = shifted_binomial(spec, &s).swap_remove(0);
        let mut r = [y0[0], y0.get(1).copied().unwrap_or(ZERO), y0.get(2).copied().unwrap_or(ZERO)];
        if spec.m == 1 {
            r[2] += u[1];
        }
        r
    };
    let scale = 1.0 + spec.coeffs.iter().flat_map(|c| c.iter().take(3)).fold(0.0f64, |m, x| m.max(x.norm()));
    let mut r = residual(&u);
    for _ in 0..60 {
        let rn = r.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if rn <= 1e-15 * scale {
            return Ok((u[0], u[1], u[2]));
        }
        // Jacobian columns: z^k A_y(z, s(z)) (+ identity contribution of -s' for m = 1).
        let s = vec![u[0], u[1], u[2]];
        let ay: Vec<C64> = {
            let shifted = shifted_binomial(spec, &s);
            shifted[1].clone()
        };
        let g = |i: usize| ay.get(i).copied().unwrap_or(ZERO);
        let mut jac = nalgebra::Matrix3::<C64>::zeros();
        for row in 0..3 {
            for col in 0..3 {
                if row >= col {
                    jac[(row, col)] = g(row - col);
                }
            }
        }
        if spec.m == 1 {
            jac[(2, 1)] += ONE;
        }
        let rhs = nalgebra::Vector3::new(-r[0], -r[1], -r[2]);
        let Some(delta) = jac.lu().solve(&rhs) else {
            return Err(EquationError::Degenerate);
        };
        for k in 0..3 {
            u[k] += delta[k];
        }
        r = residual(&u);
    }
    let rn = r.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if rn <= 1e-12 * scale {
        Ok((u[0], u[1], u[2]))
    } else {
        Err(EquationError::ShiftDiverged(rn))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::re;

    fn close(a: C64, b: C64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn parse_examples() {
        let logistic = parse_equation("m=1; y^1: [-1]; y^2: [1]").unwrap();
        assert_eq!(logistic.m, 1);
        assert_eq!(logistic.degree(), 2);
        assert_eq!(logistic.z_order, 8);
        assert_eq!(logistic.coeffs[1][0], re(-1.0));
        assert_eq!(logistic.coeffs[0], vec![ZERO; 8]);

        let soliton = parse_equation("m=2; y^1: [1]; y^2: [-1]").unwrap();
        assert_eq!(soliton.m, 2);
        assert_eq!(soliton.coeffs[2][0], re(-1.0));

        let forced = parse_equation("m=1; y^0: [0,0,0,1]; y^1: [-1]; y^2: [1]").unwrap();
        assert_eq!(forced.coeffs[0][3], ONE);
        assert_eq!(forced.eval(re(0.5), ZERO), re(0.125));
    }

    #[test]
    fn parse_errors() {
        assert_eq!(parse_equation("y^1: [-1]"), Err(EquationError::MissingOrder));
        assert!(matches!(parse_equation("m=3; y^1: [1]"), Err(EquationError::BadOrder(_))));
        assert_eq!(parse_equation("m=1; y^0: [1]"), Err(EquationError::ZeroDegree));
        assert_eq!(parse_equation("m=1; y^1: [-1]; y^2: [0, 0]"), Err(EquationError::ZeroLeading(2)));
        assert!(matches!(parse_equation("m=1; y^1: -1"), Err(EquationError::Malformed(_))));
        assert!(matches!(parse_equation("m=1; y^1: [x]"), Err(EquationError::Literal(_))));
        assert!(matches!(
            parse_equation("m=1; z_order=2; y^1: [-1, 0, 1]"),
            Err(EquationError::SeriesTooLong { .. })
        ));
    }

    #[test]
    fn format_parses_back() {
        let spec = parse_equation("m=2; y^0: [0,0,0,0.5-2i]; y^1: [1, 0.25]; y^3: [-2]").unwrap();
        assert_eq!(parse_equation(&format_equation(&spec)).unwrap(), spec);
    }

    #[test]
    fn logistic_is_already_normal() {
        let spec = parse_equation("m=1; y^1: [-1]; y^2: [1]").unwrap();
        let n = normalize(&spec).unwrap();
        assert_eq!(n.shift, Shift::identity());
        assert_eq!(n.lambda, re(-1.0));
        assert_eq!(n.alpha, ZERO);
        assert_eq!(n.spec, spec);
    }

    #[test]
    fn rescale_to_unit_lambda() {
        // x -> x/2 turns -2y + y^2 into -y + y^2/2.
        let spec = parse_equation("m=1; y^1: [-2]; y^2: [1]").unwrap();
        let n = normalize(&spec).unwrap();
        assert!(close(n.shift.x_scale, re(0.5), 1e-15));
        assert_eq!(n.lambda, re(-1.0));
        assert!(close(n.spec.coeffs[2][0], re(0.5), 1e-15));
        // re-expansion by substitution: mu * A(z/mu, y) at a test point
        let (w, y) = (C64::new(0.1, 0.05), C64::new(0.3, -0.2));
        let direct = 0.5 * spec.eval(w / 0.5, y);
        assert!(close(n.spec.eval(w, y), direct, 1e-15));
    }

    #[test]
    fn forcing_is_shifted_away() {
        // A = -y + y^2 + z: shift y -> y + a(z) with a = z + O(z^2)
        let spec = parse_equation("m=1; y^0: [0, 1]; y^1: [-1]; y^2: [1]").unwrap();
        let n = normalize(&spec).unwrap();
        assert!(close(n.shift.a, ZERO, 1e-15));
        assert!(close(n.shift.b, ONE, 1e-14));
        // z^2: A(z, s) - s' at z^2 is  -c + b^2 + b = 0  -> c = 2
        assert!(close(n.shift.c, re(2.0), 1e-13));
        for k in 0..3 {
            assert_eq!(n.spec.coeffs[0][k], ZERO);
        }
        // normalized y^1 series: -1 + 2 s(z) -> z coefficient 2
        assert!(close(n.spec.coeffs[1][1], re(2.0), 1e-13));
        assert!(close(n.alpha, re(2.0), 1e-13));
    }

    #[test]
    fn constant_forcing_uses_nearest_root() {
        // A(0, y) = 0.09 - y + y^2 has roots 0.1 and 0.9
        let spec = parse_equation("m=2; y^0: [0.09]; y^1: [-1]; y^2: [1]").unwrap();
        let n = normalize(&spec).unwrap();
        assert!(close(n.shift.a, re(0.1), 1e-14));
        assert_eq!(n.lambda, ONE);
        let replay = apply_shift(&spec, &n.shift);
        for (row, want) in replay.coeffs.iter().zip(&n.spec.coeffs) {
            for (x, w) in row.iter().zip(want) {
                assert!(close(*x, *w, 1e-12 * (1.0 + w.norm())));
            }
        }
    }

    #[test]
    fn degenerate_linearization() {
        let spec = parse_equation("m=1; y^1: [0, 1]; y^2: [1]").unwrap();
        assert_eq!(normalize(&spec), Err(EquationError::Degenerate));
    }

    #[test]
    fn alpha_for_second_order() {
        // y'' = (1 + 3z) y - y^2 -> decaying solution ~ x^{-3/2} e^{-x}
        let spec = parse_equation("m=2; y^1: [1, 3]; y^2: [-1]").unwrap();
        let n = normalize(&spec).unwrap();
        assert!(close(n.alpha, re(-1.5), 1e-15));
        let flipped = normalize_with(&spec, &NormalizeOptions { alpha_sign: AlphaSign::Minus }).unwrap();
        assert!(close(flipped.alpha, re(1.5), 1e-15));
    }

    #[test]
    fn derivatives_match_differences() {
        let spec = parse_equation("m=1; y^0: [0,0,0,1]; y^1: [-1, 0.5]; y^3: [2, 1i]").unwrap();
        let (z, y) = (C64::new(0.2, 0.1), C64::new(-0.4, 0.3));
        let h = 1e-6;
        let fd_y = (spec.eval(z, y + h) - spec.eval(z, y - h)) / (2.0 * h);
        let fd_z = (spec.eval(z + h, y) - spec.eval(z - h, y)) / (2.0 * h);
        assert!(close(spec.dy(z, y), fd_y, 1e-8));
        assert!(close(spec.dz(z, y), fd_z, 1e-8));
    }
}
