use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lateral position in nm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    #[serde(rename = "x_nm")]
    pub x: f64,
    #[serde(rename = "y_nm")]
    pub y: f64,
}

/// Position in nm; `z` is depth below the top surface (positive downward).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3D {
    #[serde(rename = "x_nm")]
    pub x: f64,
    #[serde(rename = "y_nm")]
    pub y: f64,
    #[serde(rename = "z_nm")]
    pub z: f64,
}

impl Point2D {
    pub const ORIGIN: Point2D = Point2D { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2D { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2D) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Point3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3D { x, y, z }
    }

    pub fn lateral(self) -> Point2D {
        Point2D::new(self.x, self.y)
    }
}

impl Add for Point2D {
    type Output = Point2D;
    fn add(self, rhs: Point2D) -> Point2D {
        Point2D::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2D {
    type Output = Point2D;
    fn sub(self, rhs: Point2D) -> Point2D {
        Point2D::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2D {
    type Output = Point2D;
    fn mul(self, rhs: f64) -> Point2D {
        Point2D::new(self.x * rhs, self.y * rhs)
    }
}

/// `p ↦ L·p + t` with a 2×2 linear part (row-major) and a translation in nm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform2D {
    pub linear: [[f64; 2]; 2],
    #[serde(rename = "translation")]
    pub translation: Point2D,
}

const MIN_DETERMINANT: f64 = 1e-12;

impl AffineTransform2D {
    pub const IDENTITY: AffineTransform2D = AffineTransform2D {
        linear: [[1.0, 0.0], [0.0, 1.0]],
        translation: Point2D::ORIGIN,
    };

    pub fn new(linear: [[f64; 2]; 2], translation: Point2D) -> Result<Self> {
        let t = AffineTransform2D {
            linear,
            translation,
        };
        if t.determinant().abs() <= MIN_DETERMINANT {
            return Err(Error::domain(format!(
                "affine linear part is singular (det = {:e})",
                t.determinant()
            )));
        }
        Ok(t)
    }

    pub fn translation(t: Point2D) -> Self {
        AffineTransform2D {
            translation: t,
            ..Self::IDENTITY
        }
    }

    pub fn rotation(angle_rad: f64) -> Self {
        let (s, c) = angle_rad.sin_cos();
        AffineTransform2D {
            linear: [[c, -s], [s, c]],
            translation: Point2D::ORIGIN,
        }
    }

    pub fn determinant(&self) -> f64 {
        let [[a, b], [c, d]] = self.linear;
        a * d - b * c
    }

    pub fn apply_linear(&self, p: Point2D) -> Point2D {
        let [[a, b], [c, d]] = self.linear;
        Point2D::new(a * p.x + b * p.y, c * p.x + d * p.y)
    }

    pub fn apply(&self, p: Point2D) -> Point2D {
        self.apply_linear(p) + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &AffineTransform2D) -> AffineTransform2D {
        let [[a, b], [c, d]] = self.linear;
        let [[e, f], [g, h]] = other.linear;
        AffineTransform2D {
            linear: [
                [a * e + b * g, a * f + b * h],
                [c * e + d * g, c * f + d * h],
            ],
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> Result<AffineTransform2D> {
        let det = self.determinant();
        if det.abs() <= MIN_DETERMINANT {
            return Err(Error::domain("cannot invert singular affine transform"));
        }
        let [[a, b], [c, d]] = self.linear;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let t = AffineTransform2D {
            linear: inv,
            translation: Point2D::ORIGIN,
        };
        let shift = t.apply_linear(self.translation);
        Ok(AffineTransform2D {
            linear: inv,
            translation: Point2D::new(-shift.x, -shift.y),
        })
    }
}

/// Applies `t` to `p`. Free-function form of [`AffineTransform2D::apply`].
pub fn apply_affine(t: &AffineTransform2D, p: Point2D) -> Point2D {
    t.apply(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_is_exact() {
        let p = Point2D::new(5.0, 7.0);
        assert_eq!(apply_affine(&AffineTransform2D::IDENTITY, p), p);
    }

    #[test]
    fn translation_moves_origin() {
        let t = AffineTransform2D::translation(Point2D::new(4.0, 48.0));
        assert_eq!(t.apply(Point2D::ORIGIN), Point2D::new(4.0, 48.0));
    }

    #[test]
    fn quarter_turn() {
        let r = AffineTransform2D::rotation(std::f64::consts::FRAC_PI_2);
        let p = r.apply(Point2D::new(1.0, 0.0));
        assert!(p.x.abs() < 1e-15 && (p.y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_rejected() {
        assert!(AffineTransform2D::new([[1.0, 2.0], [2.0, 4.0]], Point2D::ORIGIN).is_err());
    }

    fn arb_affine() -> impl Strategy<Value = AffineTransform2D> {
        (
            0.5f64..2.0,
            -0.5f64..0.5,
            -0.5f64..0.5,
            0.5f64..2.0,
            -1e4f64..1e4,
            -1e4f64..1e4,
        )
            .prop_map(|(a, b, c, d, tx, ty)| AffineTransform2D {
                linear: [[a, b], [c, d]],
                translation: Point2D::new(tx, ty),
            })
    }

    proptest! {
        #[test]
        fn composition_associates(a in arb_affine(), b in arb_affine(), x in -1e4f64..1e4, y in -1e4f64..1e4) {
            let p = Point2D::new(x, y);
            let lhs = a.apply(b.apply(p));
            let rhs = a.compose(&b).apply(p);
            prop_assert!(lhs.distance(rhs) < 1e-9);
        }

        #[test]
        fn inverse_round_trips(a in arb_affine(), x in -1e4f64..1e4, y in -1e4f64..1e4) {
            prop_assume!(a.determinant().abs() > 0.1);
            let p = Point2D::new(x, y);
            let back = a.inverse().unwrap().apply(a.apply(p));
            prop_assert!(back.distance(p) < 1e-7);
        }
    }
}
