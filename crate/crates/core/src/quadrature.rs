//! Globally adaptive Gauss–Kronrod (7/15) quadrature for complex-valued integrands.

use crate::series::{C64, ZERO};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: C64,
    pub error: f64,
    pub evals: usize,
    pub converged: bool,
}

/// One 15-point Kronrod panel on `[a, b]`: value and |K15 - G7|.
pub fn gk15<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += s * WGK[i];
        if i % 2 == 1 {
            g += s * WG[i / 2];
        }
    }
    (k * h, ((k - g) * h).norm())
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-13, rel_tol: 1e-12, max_panels: 4000 }
    }
}

/// Integrate `f` over `[a, b]`, optionally starting from the breakpoints `knots`.
pub fn integrate<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64, knots: &[f64], opts: &QuadOptions) -> QuadResult {
    let mut edges: Vec<f64> = vec![a];
    edges.extend(knots.iter().copied().filter(|k| *k > a && *k < b));
    edges.push(b);
    edges.dedup();
    let mut panels: Vec<(f64, f64, C64, f64)> = edges
        .windows(2)
        .map(|w| {
            let (v, e) = gk15(f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    let mut evals = 15 * panels.len();
    loop {
        let total: C64 = panels.iter().fold(ZERO, |s, p| s + p.2);
        let err: f64 = panels.iter().map(|p| p.3).sum();
        let goal = opts.abs_tol.max(opts.rel_tol * total.norm());
        if err <= goal || panels.len() >= opts.max_panels {
            return QuadResult { value: total, error: err, evals, converged: err <= goal };
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bi, be), (i, p)| if p.3 > be { (i, p.3) } else { (bi, be) });
        let (lo, hi, _, _) = panels[worst];
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return QuadResult { value: total, error: err, evals, converged: false };
        }
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        evals += 30;
        panels[worst] = (lo, mid, v1, e1);
        panels.push((mid, hi, v2, e2));
    }
}

/// Integral of `f(s)` along the straight segment from `a` to `b` in the complex plane.
pub fn integrate_segment<F: Fn(C64) -> C64>(f: &F, a: C64, b: C64, opts: &QuadOptions) -> QuadResult {
    let d = b - a;
    let g = |t: f64| f(a + d * t) * d;
    integrate(&g, 0.0, 1.0, &[], opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::re;

    #[test]
    fn polynomial_exact() {
        let r = integrate(&|x: f64| re(x.powi(5) - 3.0 * x), 0.0, 2.0, &[], &QuadOptions::default());
        assert!((r.value - re(64.0 / 6.0 - 6.0)).norm() < 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        let r = integrate(&|x: f64| re(1.0 / x.sqrt()), 0.0, 1.0, &[], &QuadOptions::default());
        assert!(r.converged);
        assert!((r.value - re(2.0)).norm() < 1e-10);
    }

    #[test]
    fn contour_integral_of_reciprocal() {
        let o = QuadOptions::default();
        let pts = [re(1.0), C64::new(0.0, 1.0), re(-1.0), C64::new(0.0, -1.0), re(1.0)];
        let total: C64 = pts.windows(2).map(|w| integrate_segment(&|z: C64| 1.0 / z, w[0], w[1], &o).value).sum();
        assert!((total - C64::new(0.0, 2.0 * std::f64::consts::PI)).norm() < 1e-12);
    }
}
