//! Confining potentials `V`.

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use serde::{Deserialize, Serialize};

/// The external potential. Serialized with a `kind` tag, e.g.
/// `{"kind": "quadratic", "strength": 1.0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `strength * |x - center|^2 + offset`.
    Quadratic {
        #[serde(default = "one")]
        strength: f64,
        #[serde(default)]
        center: Vec2,
        #[serde(default)]
        offset: f64,
    },
    /// `a x^2 + b y^2 + offset`.
    Anisotropic {
        a: f64,
        b: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `strength * |x|^4`.
    Quartic {
        #[serde(default = "one")]
        strength: f64,
    },
    /// Zero on `[-w, w]^2`, growing like `stiffness * dist^2` outside it.
    FlatBox { half_width: f64, stiffness: f64 },
}

fn one() -> f64 {
    1.0
}

impl PotentialSpec {
    pub fn quadratic() -> Self {
        PotentialSpec::Quadratic {
            strength: 1.0,
            center: Vec2::ZERO,
            offset: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            PotentialSpec::Quadratic {
                strength,
                center,
                offset,
            } => strength > 0.0 && strength.is_finite() && center.is_finite() && offset.is_finite(),
            PotentialSpec::Anisotropic { a, b, offset } => {
                a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() && offset.is_finite()
            }
            PotentialSpec::Quartic { strength } => strength > 0.0 && strength.is_finite(),
            PotentialSpec::FlatBox { half_width, stiffness } => {
                half_width > 0.0 && stiffness > 0.0 && half_width.is_finite() && stiffness.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid potential {self:?}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PotentialSpec::Quadratic { .. } => "quadratic",
            PotentialSpec::Anisotropic { .. } => "anisotropic",
            PotentialSpec::Quartic { .. } => "quartic",
            PotentialSpec::FlatBox { .. } => "flat_box",
        }
    }

    pub fn evaluate(&self, p: Vec2) -> f64 {
        match *self {
            PotentialSpec::Quadratic {
                strength,
                center,
                offset,
            } => strength * (p - center).norm2() + offset,
            PotentialSpec::Anisotropic { a, b, offset } => a * p.x * p.x + b * p.y * p.y + offset,
            PotentialSpec::Quartic { strength } => strength * p.norm2() * p.norm2(),
            PotentialSpec::FlatBox { half_width, stiffness } => {
                let ex = (p.x.abs() - half_width).max(0.0);
                let ey = (p.y.abs() - half_width).max(0.0);
                stiffness * (ex * ex + ey * ey)
            }
        }
    }

    pub fn gradient(&self, p: Vec2) -> Vec2 {
        match *self {
            PotentialSpec::Quadratic { strength, center, .. } => (p - center) * (2.0 * strength),
            PotentialSpec::Anisotropic { a, b, .. } => Vec2::new(2.0 * a * p.x, 2.0 * b * p.y),
            PotentialSpec::Quartic { strength } => p * (4.0 * strength * p.norm2()),
            PotentialSpec::FlatBox { half_width, stiffness } => {
                let ex = (p.x.abs() - half_width).max(0.0) * p.x.signum();
                let ey = (p.y.abs() - half_width).max(0.0) * p.y.signum();
                Vec2::new(2.0 * stiffness * ex, 2.0 * stiffness * ey)
            }
        }
    }

    pub fn laplacian(&self, p: Vec2) -> f64 {
        match *self {
            PotentialSpec::Quadratic { strength, .. } => 4.0 * strength,
            PotentialSpec::Anisotropic { a, b, .. } => 2.0 * (a + b),
            PotentialSpec::Quartic { strength } => 16.0 * strength * p.norm2(),
            PotentialSpec::FlatBox { half_width, stiffness } => {
                let sx = if p.x.abs() > half_width { 2.0 } else { 0.0 };
                let sy = if p.y.abs() > half_width { 2.0 } else { 0.0 };
                stiffness * (sx + sy)
            }
        }
    }

    /// Exponent `gamma` with `V(x) >= |x|^gamma` for large `|x|`.
    pub fn growth_floor(&self) -> f64 {
        match self {
            PotentialSpec::Quartic { .. } => 4.0,
            _ => 2.0,
        }
    }

    /// Radius of a disk expected to contain `supp mu_V`, used to size grids.
    pub fn support_radius_estimate(&self) -> f64 {
        match *self {
            PotentialSpec::Quadratic { strength, center, .. } => center.norm() + (1.0 / (2.0 * strength)).sqrt(),
            PotentialSpec::Anisotropic { a, b, .. } => {
                // Semi-axes of the elliptic support.
                (b / (a * (a + b))).sqrt().max((a / (b * (a + b))).sqrt())
            }
            // Radial solution: mass int_0^R 8 s r^3 dr = 2 s R^4 = 1.
            PotentialSpec::Quartic { strength } => (0.5 / strength).powf(0.25),
            PotentialSpec::FlatBox { half_width, .. } => half_width * std::f64::consts::SQRT_2,
        }
    }

    pub fn shifted(&self, c: f64) -> Self {
        match self.clone() {
            PotentialSpec::Quadratic {
                strength,
                center,
                offset,
            } => PotentialSpec::Quadratic {
                strength,
                center,
                offset: offset + c,
            },
            PotentialSpec::Anisotropic { a, b, offset } => PotentialSpec::Anisotropic {
                a,
                b,
                offset: offset + c,
            },
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_match_finite_differences() {
        let pots = [
            PotentialSpec::Quadratic {
                strength: 1.5,
                center: Vec2::new(0.2, -0.1),
                offset: 0.3,
            },
            PotentialSpec::Anisotropic {
                a: 1.0,
                b: 3.0,
                offset: 0.0,
            },
            PotentialSpec::Quartic { strength: 0.7 },
            PotentialSpec::FlatBox {
                half_width: 0.5,
                stiffness: 2.0,
            },
        ];
        let h = 1e-4;
        for v in &pots {
            v.validate().unwrap();
            for p in [Vec2::new(0.3, 0.9), Vec2::new(-1.1, 0.2), Vec2::new(0.71, -0.83)] {
                let gx = (v.evaluate(p + Vec2::new(h, 0.0)) - v.evaluate(p - Vec2::new(h, 0.0))) / (2.0 * h);
                let gy = (v.evaluate(p + Vec2::new(0.0, h)) - v.evaluate(p - Vec2::new(0.0, h))) / (2.0 * h);
                let g = v.gradient(p);
                assert!((g.x - gx).abs() < 1e-6 && (g.y - gy).abs() < 1e-6, "{v:?}");
                let lap = (v.evaluate(p + Vec2::new(h, 0.0))
                    + v.evaluate(p - Vec2::new(h, 0.0))
                    + v.evaluate(p + Vec2::new(0.0, h))
                    + v.evaluate(p - Vec2::new(0.0, h))
                    - 4.0 * v.evaluate(p))
                    / (h * h);
                assert!((v.laplacian(p) - lap).abs() < 1e-4, "{v:?}");
            }
        }
    }

    #[test]
    fn json_roundtrip_uses_kind_tag() {
        let v: PotentialSpec = serde_json::from_str(r#"{"kind":"quadratic"}"#).unwrap();
        assert_eq!(v, PotentialSpec::quadratic());
        let s = serde_json::to_string(&PotentialSpec::Quartic { strength: 2.0 }).unwrap();
        assert_eq!(s, r#"{"kind":"quartic","strength":2.0}"#);
    }
}
