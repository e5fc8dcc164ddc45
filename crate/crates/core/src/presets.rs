//! Equation families with closed-form answers. Every known field is re-derived
//! by an independent routine before a preset is handed out.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::associated::{f0_series, AssociatedSign};
use crate::eqmodel::{normalize, parse_equation, NormalizedEquation};
use crate::series::{C64, I, ONE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PresetError {
    #[error("unknown preset {0:?}")]
    Unknown(String),
    #[error("preset {0:?} is a stub; supply the reduced coefficients with --eq")]
    Stub(String),
    #[error("preset {name:?}: {field} check failed ({detail})")]
    Gate { name: String, field: &'static str, detail: String },
}

/// Closed-form decaying solution families, written in terms of `xi = C e^{-x}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosedForm {
    /// `y = xi / (1 + xi)`.
    Logistic,
    /// `y = 36 xi / (6 + xi)^2`, i.e. `(3/2) sech^2((x - x0)/2)`.
    Soliton,
    /// `y = xi / sqrt(1 + xi^2)`.
    Cubic,
}

impl ClosedForm {
    pub fn profile(self, xi: C64) -> C64 {
        match self {
            ClosedForm::Logistic => xi / (1.0 + xi),
            ClosedForm::Soliton => 36.0 * xi / ((6.0 + xi) * (6.0 + xi)),
            ClosedForm::Cubic => xi / (1.0 + xi * xi).sqrt(),
        }
    }

    /// `[y, y', y'']` at `x` for connection constant `c`, differentiated by hand.
    pub fn solution(self, c: C64, x: C64) -> [C64; 3] {
        let xi = c * (-x).exp();
        match self {
            ClosedForm::Logistic => {
                let d = 1.0 + xi;
                [xi / d, -xi / (d * d), xi * (1.0 - xi) / (d * d * d)]
            }
            ClosedForm::Soliton => {
                let d = 6.0 + xi;
                let d2 = d * d;
                [36.0 * xi / d2, -36.0 * xi * (6.0 - xi) / (d2 * d), 36.0 * xi * (36.0 - 24.0 * xi + xi * xi) / (d2 * d2)]
            }
            ClosedForm::Cubic => {
                let s = 1.0 + xi * xi;
                let r = s.sqrt();
                [xi / r, -xi / (s * r), xi * (1.0 - 2.0 * xi * xi) / (s * s * r)]
            }
        }
    }

    /// Taylor coefficient of the profile at `xi^n`.
    pub fn coefficient(self, n: usize) -> C64 {
        let v = match self {
            ClosedForm::Logistic => {
                if n == 0 {
                    0.0
                } else if n % 2 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
            ClosedForm::Soliton => {
                if n == 0 {
                    0.0
                } else {
                    n as f64 * (-1.0f64 / 6.0).powi(n as i32 - 1)
                }
            }
            ClosedForm::Cubic => {
                if n % 2 == 0 {
                    0.0
                } else {
                    (0..(n - 1) / 2).fold(1.0, |acc, j| acc * (-0.5 - j as f64) / (j + 1) as f64)
                }
            }
        };
        C64::new(v, 0.0)
    }

    /// Zeros of the profile's denominator.
    pub fn xi_singularities(self) -> Vec<C64> {
        match self {
            ClosedForm::Logistic => vec![C64::new(-1.0, 0.0)],
            ClosedForm::Soliton => vec![C64::new(-6.0, 0.0)],
            ClosedForm::Cubic => vec![I, -I],
        }
    }

    /// Singular point `k` of the solution with constant `c`: `ln c - ln xi_s + 2 k pi i`
    /// (for the cubic family the two `xi_s` interleave at odd multiples of `pi i / 2`).
    pub fn lattice_point(self, c: C64, k: i64) -> C64 {
        match self {
            ClosedForm::Logistic | ClosedForm::Soliton => {
                let xs = self.xi_singularities()[0];
                c.ln() - C64::new((-xs.re).ln(), PI) + I * (2.0 * PI * k as f64)
            }
            ClosedForm::Cubic => c.ln() + I * (PI * (k as f64 + 0.5)),
        }
    }

    fn denominator(self, xi: C64) -> C64 {
        match self {
            ClosedForm::Logistic => 1.0 + xi,
            ClosedForm::Soliton => 6.0 + xi,
            ClosedForm::Cubic => 1.0 + xi * xi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Known {
    pub family: ClosedForm,
    pub xi_s: Vec<C64>,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    /// Equation config text; `None` for stubs.
    pub config: Option<String>,
    pub known: Option<Known>,
}

impl Preset {
    pub fn equation(&self) -> Result<NormalizedEquation, PresetError> {
        let text = self.config.as_deref().ok_or_else(|| PresetError::Stub(self.name.clone()))?;
        let spec = parse_equation(text).map_err(|e| self.gate("config", e.to_string()))?;
        normalize(&spec).map_err(|e| self.gate("config", e.to_string()))
    }

    fn gate(&self, field: &'static str, detail: String) -> PresetError {
        PresetError::Gate { name: self.name.clone(), field, detail }
    }
}

const NAMES: [&str; 6] = ["logistic-m1", "soliton-m2", "cubic-m1", "perturbed-logistic", "painleve-i", "painleve-ii"];

pub fn list_presets() -> Vec<&'static str> {
    NAMES.to_vec()
}

fn raw(name: &str) -> Option<Preset> {
    let p = |desc: &str, cfg: Option<&str>, known: Option<Known>| Preset {
        name: name.to_string(),
        description: desc.to_string(),
        config: cfg.map(str::to_string),
        known,
    };
    Some(match name {
        "logistic-m1" => p(
            "y' = -y + y^2",
            Some("m = 1\ny^1: [-1]\ny^2: [1]\n"),
            Some(Known { family: ClosedForm::Logistic, xi_s: vec![C64::new(-1.0, 0.0)], exponent: -1.0 }),
        ),
        "soliton-m2" => p(
            "y'' = y - y^2",
            Some("m = 2\ny^1: [1]\ny^2: [-1]\n"),
            Some(Known { family: ClosedForm::Soliton, xi_s: vec![C64::new(-6.0, 0.0)], exponent: -2.0 }),
        ),
        "cubic-m1" => p(
            "y' = -y + y^3",
            Some("m = 1\ny^1: [-1]\ny^3: [1]\n"),
            Some(Known { family: ClosedForm::Cubic, xi_s: vec![I, -I], exponent: -0.5 }),
        ),
        "perturbed-logistic" => p("y' = -y + y^2 + x^-3", Some("m = 1\ny^0: [0, 0, 0, 1]\ny^1: [-1]\ny^2: [1]\n"), None),
        "painleve-i" => p("Painleve I; needs the reduced coefficients", None, None),
        "painleve-ii" => p("Painleve II; needs the reduced coefficients", None, None),
        _ => return None,
    })
}

/// Registry lookup followed by the oracle gate.
pub fn load_preset(name: &str) -> Result<Preset, PresetError> {
    let preset = raw(name).ok_or_else(|| PresetError::Unknown(name.to_string()))?;
    verify_preset(&preset)?;
    Ok(preset)
}

const GATE_TOL: f64 = 1e-12;

/// Recompute every known field: substitution of the closed form into the ODE,
/// Taylor coefficients against the recurrence, denominator zeros, the exponent
/// `m/(1-N)` and the singular lattice.
pub fn verify_preset(p: &Preset) -> Result<(), PresetError> {
    let Some(known) = &p.known else {
        if p.config.is_some() {
            p.equation()?;
        }
        return Ok(());
    };
    let eq = p.equation()?;
    let fam = known.family;

    let points = [C64::new(3.0, 0.4), C64::new(1.5, -2.0), C64::new(6.0, 1.0)];
    let constants = [ONE, C64::new(2.0, 0.0), C64::new(0.5, 0.5)];
    for &c in &constants {
        for &x in &points {
            let [y, d1, d2] = fam.solution(c, x);
            let rhs = eq.spec.eval(ONE / x, y);
            let lhs = if eq.m() == 1 { d1 } else { d2 };
            let scale = lhs.norm().max(rhs.norm()).max(1e-300);
            if (lhs - rhs).norm() > GATE_TOL * scale {
                return Err(p.gate("solution", format!("residual {:.3e} at x = {x}", (lhs - rhs).norm() / scale)));
            }
            if (fam.profile(c * (-x).exp()) - y).norm() > GATE_TOL * y.norm() {
                return Err(p.gate("solution", "profile and solution disagree".to_string()));
            }
        }
    }

    let sol = f0_series(&eq, 40, AssociatedSign::Consistent).map_err(|e| p.gate("F0", e.to_string()))?;
    for (n, got) in sol.coeffs.iter().enumerate() {
        let want = fam.coefficient(n);
        if (got - want).norm() > GATE_TOL * want.norm().max(1e-300) && (got - want).norm() > 0.0 {
            return Err(p.gate("F0", format!("coefficient {n}: {got} vs {want}")));
        }
    }

    if known.xi_s != fam.xi_singularities() {
        return Err(p.gate("xi_s", format!("{:?}", known.xi_s)));
    }
    for &xs in &known.xi_s {
        if fam.denominator(xs).norm() != 0.0 {
            return Err(p.gate("xi_s", format!("denominator nonzero at {xs}")));
        }
    }

    if eq.theoretical_exponent() != known.exponent {
        return Err(p.gate("exponent", format!("{} vs {}", eq.theoretical_exponent(), known.exponent)));
    }

    for &c in &constants {
        for k in -3..=3 {
            let x = fam.lattice_point(c, k);
            let r = fam.denominator(c * (-x).exp()).norm();
            if r > 1e-13 {
                return Err(p.gate("lattice", format!("denominator {r:.3e} at k = {k}")));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_passes_its_gate() {
        for name in list_presets() {
            let p = load_preset(name).unwrap();
            assert_eq!(p.name, name);
        }
    }

    #[test]
    fn stubs_refuse_to_build_equations() {
        let p = load_preset("painleve-i").unwrap();
        assert!(matches!(p.equation(), Err(PresetError::Stub(_))));
        assert!(matches!(load_preset("nope"), Err(PresetError::Unknown(_))));
    }

    #[test]
    fn gate_catches_wrong_known_fields() {
        let mut p = raw("logistic-m1").unwrap();
        p.known.as_mut().unwrap().exponent = -2.0;
        assert!(matches!(verify_preset(&p), Err(PresetError::Gate { field: "exponent", .. })));
        let mut q = raw("soliton-m2").unwrap();
        q.known.as_mut().unwrap().family = ClosedForm::Logistic;
        assert!(verify_preset(&q).is_err());
    }

    #[test]
    fn soliton_is_a_sech_square() {
        // (3/2) sech^2((x - x0)/2) with e^{x0} = 1/6 is the C = 1 member.
        let x0 = -(6f64.ln());
        for x in [0.3, 1.0, 2.5] {
            let s = 1.0 / ((x - x0) / 2.0f64).cosh();
            let y = ClosedForm::Soliton.solution(ONE, C64::new(x, 0.0))[0];
            assert!((y.re - 1.5 * s * s).abs() < 1e-14);
        }
    }
}
