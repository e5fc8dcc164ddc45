//! Truncated power series and polynomial helpers over `Complex64`.
//!
//! Coefficient vectors are stored in ascending order: `c[i]` multiplies `z^i`.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Horner evaluation of an ascending coefficient vector.
pub fn eval(coeffs: &[C64], z: C64) -> C64 {
    coeffs.iter().rev().fold(ZERO, |acc, &c| acc * z + c)
}

/// Value and first derivative at `z`.
pub fn eval_with_derivative(coeffs: &[C64], z: C64) -> (C64, C64) {
    let mut p = ZERO;
    let mut dp = ZERO;
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

pub fn derivative(coeffs: &[C64]) -> Vec<C64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, &c)| c * i as f64)
        .collect()
}

/// Product of two series, truncated to `len` coefficients.
pub fn mul_trunc(a: &[C64], b: &[C64], len: usize) -> Vec<C64> {
    let mut out = vec![ZERO; len];
    for (i, &ai) in a.iter().enumerate().take(len) {
        if ai == ZERO {
            continue;
        }
        for (j, &bj) in b.iter().enumerate().take(len - i) {
            out[i + j] += ai * bj;
        }
    }
    out
}

pub fn add_into(acc: &mut [C64], b: &[C64]) {
    for (a, &x) in acc.iter_mut().zip(b) {
        *a += x;
    }
}

/// `1 / a` as a truncated series. Requires `a[0] != 0`.
pub fn recip_trunc(a: &[C64], len: usize) -> Vec<C64> {
    let mut out = vec![ZERO; len];
    if len == 0 {
        return out;
    }
    let inv0 = ONE / a[0];
    out[0] = inv0;
    for n in 1..len {
        let mut s = ZERO;
        for k in 1..=n.min(a.len() - 1) {
            s += a[k] * out[n - k];
        }
        out[n] = -s * inv0;
    }
    out
}

/// `a^beta` for a series with `a[0] = 1`, using the J.C.P. Miller recurrence.
pub fn pow_trunc(a: &[C64], beta: C64, len: usize) -> Vec<C64> {
    let mut q = vec![ZERO; len];
    if len == 0 {
        return q;
    }
    q[0] = ONE;
    for n in 1..len {
        let mut s = ZERO;
        for i in 1..=n.min(a.len() - 1) {
            s += ((beta + 1.0) * i as f64 - n as f64) * a[i] * q[n - i];
        }
        q[n] = s / n as f64;
    }
    q
}

pub fn norm2(c: &[C64]) -> f64 {
    c.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Drop trailing coefficients with modulus `<= tol * max|c|`.
pub fn trim_trailing(mut c: Vec<C64>, tol: f64) -> Vec<C64> {
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.norm()));
    while c.len() > 1 && c.last().is_some_and(|x| x.norm() <= tol * scale) {
        c.pop();
    }
    c
}

/// All roots of the polynomial (ascending coefficients), via companion-matrix
/// eigenvalues followed by Newton polishing. Exact zero roots at the origin
/// are returned as `0` with their multiplicity.
pub fn poly_roots(coeffs: &[C64]) -> Vec<C64> {
    let c = trim_trailing(coeffs.to_vec(), 1e-15);
    let lead_zeros = c.iter().take_while(|x| **x == ZERO).count();
    let mut roots = vec![ZERO; lead_zeros.min(c.len().saturating_sub(1))];
    let c = &c[lead_zeros.min(c.len())..];
    let n = c.len().saturating_sub(1);
    if n == 0 {
        return roots;
    }
    let lead = c[n];
    let mut m = DMatrix::<C64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = ONE;
    }
    for i in 0..n {
        m[(i, n - 1)] = -c[i] / lead;
    }
    let eig = Schur::new(m)
        .eigenvalues()
        .map(|v| v.iter().copied().collect::<Vec<_>>())
        .unwrap_or_default();
    for mut z in eig {
        for _ in 0..4 {
            let (p, dp) = eval_with_derivative(c, z);
            if dp.norm() == 0.0 {
                break;
            }
            let step = p / dp;
            // Newton may wander for clustered roots; keep only improving steps.
            let cand = z - step;
            if eval(c, cand).norm() < p.norm() {
                z = cand;
            } else {
                break;
            }
        }
        roots.push(z);
    }
    roots
}

/// Solve a dense complex least-squares problem `min |A x - b|` by SVD.
pub fn lstsq(a: &DMatrix<C64>, b: &[C64]) -> Option<Vec<C64>> {
    let rhs = nalgebra::DVector::from_column_slice(b);
    let svd = a.clone().svd(true, true);
    svd.solve(&rhs, 1e-14).ok().map(|x| x.iter().copied().collect())
}

/// Real least squares via normal equations on a small design matrix.
pub fn lstsq_real(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let n = rows.len();
    let p = rows.first()?.len();
    let a = DMatrix::<f64>::from_fn(n, p, |i, j| rows[i][j]);
    let b = nalgebra::DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).ok().map(|x| x.iter().copied().collect())
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
