//! Polyline paths in the complex plane.

use serde::{Deserialize, Serialize};

use crate::literal::{parse_complex_list, LiteralError};
use crate::series::C64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PathError {
    #[error("a path needs at least two nodes, got {0}")]
    TooShort(usize),
    #[error("path node {0} is not finite")]
    NotFinite(usize),
    #[error(transparent)]
    Literal(#[from] LiteralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub nodes: Vec<C64>,
    /// Minimal allowed distance to known singular points.
    pub clearance: f64,
}

impl PathSpec {
    pub fn new(nodes: Vec<C64>, clearance: f64) -> Result<Self, PathError> {
        if nodes.len() < 2 {
            return Err(PathError::TooShort(nodes.len()));
        }
        if let Some(i) = nodes.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(PathError::NotFinite(i));
        }
        Ok(Self { nodes, clearance })
    }

    /// Parse `"a;b;c"` with complex literals.
    pub fn parse(text: &str, clearance: f64) -> Result<Self, PathError> {
        Self::new(parse_complex_list(text)?, clearance)
    }

    pub fn length(&self) -> f64 {
        self.nodes.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn start(&self) -> C64 {
        self.nodes[0]
    }

    pub fn end(&self) -> C64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Distance from `p` to the polyline.
    pub fn distance_to(&self, p: C64) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| segment_distance(w[0], w[1], p))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn segment_distance(a: C64, b: C64, p: C64) -> f64 {
    let d = b - a;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a) * d.conj()).re / len2;
    (p - (a + d * t.clamp(0.0, 1.0))).norm()
}

/// Distance from `p` to the ray `a + t d`, `t >= 0`.
pub fn ray_distance(a: C64, d: C64, p: C64) -> f64 {
    let len2 = d.norm_sqr();
    let t = (((p - a) * d.conj()).re / len2).max(0.0);
    (p - (a + d * t)).norm()
}

/// Points `center + r e^{i theta}` for `theta` from `t0` to `t1` (inclusive), `count + 1` nodes.
pub fn arc(center: C64, r: f64, t0: f64, t1: f64, count: usize) -> Vec<C64> {
    (0..=count)
        .map(|k| {
            let t = t0 + (t1 - t0) * k as f64 / count as f64;
            center + C64::from_polar(r, t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_measure() {
        let p = PathSpec::parse("0; 3; 3+4i", 0.1).unwrap();
        assert_eq!(p.nodes.len(), 3);
        assert!((p.length() - 7.0).abs() < 1e-15);
        assert!((p.distance_to(C64::new(1.0, 1.0)) - 1.0).abs() < 1e-15);
        assert!(PathSpec::parse("1", 0.1).is_err());
    }

    #[test]
    fn distances() {
        let a = C64::new(0.0, 0.0);
        assert!((ray_distance(a, C64::new(1.0, 0.0), C64::new(-1.0, 1.0)) - 2f64.sqrt()).abs() < 1e-15);
        assert!((ray_distance(a, C64::new(1.0, 0.0), C64::new(5.0, 1.0)) - 1.0).abs() < 1e-15);
    }
}
