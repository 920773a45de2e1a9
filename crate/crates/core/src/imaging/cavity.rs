use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundation::Point2D;

pub const DEFAULT_RAMAN_WAVELENGTH_NM: f64 = 572.8;

/// Where diamond is present around a cavity, in cavity-centred coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaterialMask {
    /// Unpatterned diamond.
    Bulk,
    /// Diamond inside an ellipse, air outside.
    Ellipse {
        semi_axis_x_nm: f64,
        semi_axis_y_nm: f64,
    },
    /// Triangular lattice of air holes with three holes removed along x.
    L3 {
        lattice_constant_nm: f64,
        hole_radius_nm: f64,
    },
}

impl MaterialMask {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MaterialMask::Bulk => Ok(()),
            MaterialMask::Ellipse {
                semi_axis_x_nm,
                semi_axis_y_nm,
            } => {
                if semi_axis_x_nm > 0.0 && semi_axis_y_nm > 0.0 {
                    Ok(())
                } else {
                    Err(Error::domain("ellipse semi-axes must be > 0"))
                }
            }
            MaterialMask::L3 {
                lattice_constant_nm: a,
                hole_radius_nm: r,
            } => {
                if a > 0.0 && r > 0.0 && 2.0 * r < a {
                    Ok(())
                } else {
                    Err(Error::domain(
                        "L3 lattice needs 0 < 2·hole_radius < lattice_constant",
                    ))
                }
            }
        }
    }

    /// True where `p` (relative to the cavity centre) lies in diamond.
    pub fn is_material(&self, p: Point2D) -> bool {
        match *self {
            MaterialMask::Bulk => true,
            MaterialMask::Ellipse {
                semi_axis_x_nm: ax,
                semi_axis_y_nm: ay,
            } => (p.x / ax).powi(2) + (p.y / ay).powi(2) <= 1.0,
            MaterialMask::L3 {
                lattice_constant_nm: a,
                hole_radius_nm: r,
            } => {
                let row_h = a * 3f64.sqrt() / 2.0;
                let j0 = (p.y / row_h).floor() as i64;
                for j in j0 - 1..=j0 + 2 {
                    let shift = if j.rem_euclid(2) == 1 { 0.5 } else { 0.0 };
                    let i0 = (p.x / a - shift).round() as i64;
                    for i in i0 - 1..=i0 + 1 {
                        if j == 0 && (-1..=1).contains(&i) {
                            continue;
                        }
                        let cx = (i as f64 + shift) * a;
                        let cy = j as f64 * row_h;
                        if (p.x - cx).powi(2) + (p.y - cy).powi(2) < r * r {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }
}

/// A nanocavity: its centre, patterned material, field maxima and the pump
/// Raman line used as a position reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityLayout {
    pub center: Point2D,
    pub mask: MaterialMask,
    /// Field maxima relative to `center`.
    pub mode_maxima: Vec<Point2D>,
    pub raman_wavelength_nm: f64,
}

impl CavityLayout {
    /// L3 cavity with maxima at the centre and at ±0.9·a along x.
    pub fn l3(center: Point2D, lattice_constant_nm: f64, hole_radius_nm: f64) -> Result<Self> {
        let a = lattice_constant_nm;
        let c = CavityLayout {
            center,
            mask: MaterialMask::L3 {
                lattice_constant_nm: a,
                hole_radius_nm,
            },
            mode_maxima: vec![
                Point2D::new(-0.9 * a, 0.0),
                Point2D::ORIGIN,
                Point2D::new(0.9 * a, 0.0),
            ],
            raman_wavelength_nm: DEFAULT_RAMAN_WAVELENGTH_NM,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        if !(self.raman_wavelength_nm > 0.0) {
            return Err(Error::domain("Raman wavelength must be > 0"));
        }
        if self.mode_maxima.is_empty() {
            return Err(Error::domain("cavity needs at least one mode maximum"));
        }
        if matches!(self.mask, MaterialMask::L3 { .. }) && self.mode_maxima.len() != 3 {
            return Err(Error::domain("an L3 cavity has three mode maxima"));
        }
        if let Some(m) = self.mode_maxima.iter().find(|&&m| !self.mask.is_material(m)) {
            return Err(Error::domain(format!(
                "mode maximum ({}, {}) nm lies outside the material",
                m.x, m.y
            )));
        }
        Ok(())
    }

    /// Absolute position of mode maximum `i`.
    pub fn maximum(&self, i: usize) -> Point2D {
        self.center + self.mode_maxima[i]
    }

    pub fn is_material(&self, p: Point2D) -> bool {
        self.mask.is_material(p - self.center)
    }

    /// Index of the mode maximum closest to `p`.
    pub fn nearest_maximum(&self, p: Point2D) -> usize {
        (0..self.mode_maxima.len())
            .min_by(|&a, &b| {
                p.distance(self.maximum(a))
                    .total_cmp(&p.distance(self.maximum(b)))
            })
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l3_holes_and_defect() {
        let c = CavityLayout::l3(Point2D::new(1000.0, 500.0), 250.0, 70.0).unwrap();
        for i in 0..3 {
            assert!(c.is_material(c.maximum(i)));
        }
        assert!(!c.is_material(c.center + Point2D::new(500.0, 0.0)));
        assert!(!c.is_material(c.center + Point2D::new(125.0, 216.5)));
        assert!(c.is_material(c.center + Point2D::new(0.0, 108.0)));
    }

    #[test]
    fn maxima_must_be_in_material() {
        let mut c = CavityLayout::l3(Point2D::ORIGIN, 250.0, 70.0).unwrap();
        c.mode_maxima[2] = Point2D::new(500.0, 0.0);
        assert!(c.validate().is_err());
        c.mode_maxima.pop();
        assert!(c.validate().is_err());
        assert!(CavityLayout::l3(Point2D::ORIGIN, 100.0, 60.0).is_err());
    }

    #[test]
    fn ellipse_mask() {
        let m = MaterialMask::Ellipse {
            semi_axis_x_nm: 300.0,
            semi_axis_y_nm: 100.0,
        };
        assert!(m.is_material(Point2D::new(299.0, 0.0)));
        assert!(!m.is_material(Point2D::new(0.0, 101.0)));
    }
}
