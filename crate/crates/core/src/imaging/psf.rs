use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundation::units::sigma_from_fwhm;

/// Gaussian approximation of the confocal point-spread function with
/// FWHM = 0.51·λ/NA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfSpec {
    pub numerical_aperture: f64,
    pub wavelength_nm: f64,
}

impl PsfSpec {
    pub fn new(numerical_aperture: f64, wavelength_nm: f64) -> Result<Self> {
        let p = PsfSpec {
            numerical_aperture,
            wavelength_nm,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.numerical_aperture > 0.0 && self.numerical_aperture <= 1.5) {
            return Err(Error::OutOfRange {
                quantity: "numerical_aperture",
                value: self.numerical_aperture,
                min: 0.0,
                max: 1.5,
            });
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(Error::domain("PSF wavelength must be > 0"));
        }
        Ok(())
    }

    pub fn fwhm_nm(&self) -> f64 {
        0.51 * self.wavelength_nm / self.numerical_aperture
    }

    pub fn gaussian_sigma_nm(&self) -> f64 {
        sigma_from_fwhm(self.fwhm_nm())
    }
}

/// Gaussian PSF σ (nm) for a numerical aperture and wavelength.
pub fn psf_sigma(na: f64, wavelength_nm: f64) -> Result<f64> {
    Ok(PsfSpec::new(na, wavelength_nm)?.gaussian_sigma_nm())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_sigmas() {
        assert!((psf_sigma(1.3, 737.0).unwrap() - 122.8).abs() < 0.05);
        assert!((psf_sigma(0.95, 737.0).unwrap() - 168.0).abs() < 0.05);
        let a = psf_sigma(0.9, 500.0).unwrap();
        assert_eq!(psf_sigma(0.9, 1000.0).unwrap(), 2.0 * a);
    }

    #[test]
    fn aperture_bounds() {
        assert!(psf_sigma(0.0, 737.0).is_err());
        assert!(psf_sigma(1.6, 737.0).is_err());
        assert!(psf_sigma(1.5, 737.0).is_ok());
    }
}
