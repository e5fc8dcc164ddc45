//! Padé approximation by the SVD-based robust algorithm of Gonnet, Güttel and
//! Trefethen: numerically rank-deficient Toeplitz blocks reduce the degrees
//! instead of producing spurious pole-zero pairs.

use nalgebra::DMatrix;

use crate::series::{self, norm2, C64, ONE, ZERO};

#[derive(Debug, Clone, PartialEq)]
pub struct Rational {
    /// Ascending numerator coefficients.
    pub num: Vec<C64>,
    /// Ascending denominator coefficients, `den[0] = 1`.
    pub den: Vec<C64>,
}

impl Rational {
    pub fn eval(&self, z: C64) -> C64 {
        series::eval(&self.num, z) / series::eval(&self.den, z)
    }

    pub fn poles(&self) -> Vec<C64> {
        series::poly_roots(&self.den)
    }

    pub fn zeros(&self) -> Vec<C64> {
        series::poly_roots(&self.num)
    }

    /// Residue at a simple pole `p`.
    pub fn residue(&self, p: C64) -> C64 {
        let (_, dq) = series::eval_with_derivative(&self.den, p);
        series::eval(&self.num, p) / dq
    }
}

fn singular_values(m: &DMatrix<C64>) -> Vec<f64> {
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

/// Right null vector of an `n x (n+1)` matrix (smallest right singular vector).
fn null_vector(c: &DMatrix<C64>) -> Vec<C64> {
    let cols = c.ncols();
    let mut padded = DMatrix::<C64>::zeros(cols, cols);
    padded.view_mut((0, 0), (c.nrows(), cols)).copy_from(c);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^H");
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, &s)| if s < bv { (i, s) } else { (bi, bv) });
    (0..cols).map(|j| vt[(imin, j)].conj()).collect()
}

/// Type `[m/n]` approximant of the series `c` (needs `m + n + 1` coefficients;
/// missing ones are taken as zero). `tol` is relative to `|c|_2`.
pub fn robust_pade(c: &[C64], m: usize, n: usize, tol: f64) -> Rational {
    let mut c: Vec<C64> = c.iter().copied().take(m + n + 1).collect();
    c.resize(m + n + 1, ZERO);
    let cnorm = norm2(&c);
    if cnorm == 0.0 {
        return Rational { num: vec![ZERO], den: vec![ONE] };
    }
    let at = |i: isize| if i >= 0 { c[i as usize] } else { ZERO };
    let (mut m, mut n) = (m, n);
    let block = |m: usize, n: usize| {
        DMatrix::<C64>::from_fn(n, n + 1, |r, j| at((m + 1 + r) as isize - j as isize))
    };
    while n > 0 {
        let sv = singular_values(&block(m, n));
        let rank = sv.iter().filter(|&&s| s > tol * cnorm).count();
        if rank == n {
            break;
        }
        m = m.saturating_sub(n - rank);
        n = rank;
    }
    let mut b = if n == 0 {
        vec![ONE]
    } else {
        let cm = block(m, n);
        let b0 = null_vector(&cm);
        // Column reweighting improves the accuracy of small denominator entries.
        let d: Vec<f64> = b0.iter().map(|x| x.norm() + f64::EPSILON.sqrt()).collect();
        let cd = DMatrix::<C64>::from_fn(n, n + 1, |r, j| cm[(r, j)] * d[j]);
        let b1 = null_vector(&cd);
        let b: Vec<C64> = b1.iter().zip(&d).map(|(x, w)| x * *w).collect();
        let s = norm2(&b);
        b.into_iter().map(|x| x / s).collect()
    };
    let mut a: Vec<C64> = (0..=m)
        .map(|i| (0..=i.min(n)).fold(ZERO, |acc, j| acc + at(i as isize - j as isize) * b[j]))
        .collect();
    // Common factors of z at the origin.
    let lam = b.iter().position(|x| x.norm() > tol).unwrap_or(0);
    b.drain(..lam);
    a.drain(..lam.min(a.len()));
    if a.is_empty() {
        a.push(ZERO);
    }
    while a.len() > 1 && a.last().is_some_and(|x| x.norm() <= tol * cnorm) {
        a.pop();
    }
    while b.len() > 1 && b.last().is_some_and(|x| x.norm() <= tol) {
        b.pop();
    }
    let b0 = b[0];
    Rational {
        num: a.into_iter().map(|x| x / b0).collect(),
        den: b.into_iter().map(|x| x / b0).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::re;

    #[test]
    fn geometric_series_reduces_to_one_pole() {
        let c: Vec<C64> = (0..20).map(|k| re(0.5f64.powi(k))).collect();
        let r = robust_pade(&c, 8, 8, 1e-13);
        assert_eq!(r.den.len(), 2);
        let p = r.poles();
        assert!((p[0] - re(2.0)).norm() < 1e-12);
    }

    #[test]
    fn exp_is_approximated() {
        let mut c = vec![ONE];
        for k in 1..20 {
            c.push(c[k - 1] / k as f64);
        }
        let r = robust_pade(&c, 6, 6, 1e-14);
        let z = re(0.7);
        assert!((r.eval(z) - z.exp()).norm() < 1e-12);
    }

    #[test]
    fn residue_of_simple_pole() {
        // 3 / (1 - z) around the origin: residue -3 at z = 1
        let c: Vec<C64> = (0..12).map(|_| re(3.0)).collect();
        let r = robust_pade(&c, 5, 5, 1e-13);
        let p = r.poles()[0];
        assert!((r.residue(p) - re(-3.0)).norm() < 1e-11);
    }
}
