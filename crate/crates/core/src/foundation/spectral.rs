use serde::{Deserialize, Serialize};

use super::units::{
    frequency_linewidth_to_wavelength, frequency_to_wavelength, wavelength_linewidth_to_frequency,
    wavelength_to_frequency,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralUnit {
    FrequencyGhz,
    WavelengthNm,
}

/// A spectral line position and FWHM tagged with their unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralQuantity {
    pub center: f64,
    pub width: f64,
    pub unit: SpectralUnit,
}

impl SpectralQuantity {
    pub fn frequency(center_ghz: f64, fwhm_ghz: f64) -> Result<Self> {
        Self::new(center_ghz, fwhm_ghz, SpectralUnit::FrequencyGhz)
    }

    pub fn wavelength(center_nm: f64, fwhm_nm: f64) -> Result<Self> {
        Self::new(center_nm, fwhm_nm, SpectralUnit::WavelengthNm)
    }

    fn new(center: f64, width: f64, unit: SpectralUnit) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::domain(format!("spectral width must be > 0, got {width}")));
        }
        if unit == SpectralUnit::WavelengthNm && !(center > 0.0 && center < 10_000.0) {
            return Err(Error::OutOfRange {
                quantity: "wavelength_nm",
                value: center,
                min: 0.0,
                max: 10_000.0,
            });
        }
        if unit == SpectralUnit::FrequencyGhz && !(center > 0.0) {
            return Err(Error::domain("optical frequency must be positive"));
        }
        Ok(SpectralQuantity {
            center,
            width,
            unit,
        })
    }

    pub fn to_frequency(self) -> Result<Self> {
        match self.unit {
            SpectralUnit::FrequencyGhz => Ok(self),
            SpectralUnit::WavelengthNm => Self::frequency(
                wavelength_to_frequency(self.center),
                wavelength_linewidth_to_frequency(self.center, self.width)?,
            ),
        }
    }

    pub fn to_wavelength(self) -> Result<Self> {
        match self.unit {
            SpectralUnit::WavelengthNm => Ok(self),
            SpectralUnit::FrequencyGhz => {
                let center = frequency_to_wavelength(self.center);
                Self::wavelength(center, frequency_linewidth_to_wavelength(center, self.width)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_wavelength() {
        let q = SpectralQuantity::wavelength(737.0, 0.061).unwrap();
        let f = q.to_frequency().unwrap();
        assert!((f.width - 33.67).abs() < 0.01);
        let back = f.to_wavelength().unwrap();
        assert!((back.center - 737.0).abs() < 1e-9);
        assert!((back.width - 0.061).abs() < 1e-6);
    }

    #[test]
    fn invariants() {
        assert!(SpectralQuantity::wavelength(737.0, 0.0).is_err());
        assert!(SpectralQuantity::wavelength(12_000.0, 1.0).is_err());
        assert!(SpectralQuantity::frequency(406_000.0, -1.0).is_err());
    }
}
