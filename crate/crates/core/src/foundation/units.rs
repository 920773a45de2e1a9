//! Physical constants and unit conversions.
//!
//! Canonical units throughout the crate: nm for length, keV for energy, GHz
//! for optical frequency, seconds for time, counts for photon tallies.

use crate::error::{Error, Result};

/// Ratio FWHM / σ for a Gaussian, 2√(2 ln 2).
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

/// Speed of light in nm/s.
pub const SPEED_OF_LIGHT_NM_PER_S: f64 = 2.997_924_58e17;

/// Elementary charge in coulombs.
pub const ELEMENTARY_CHARGE_C: f64 = 1.602_176_634e-19;

/// Square centimetres per square micrometre.
pub const CM2_PER_UM2: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WidthDirection {
    ToSigma,
    ToFwhm,
}

/// Converts between a Gaussian FWHM and its standard deviation. Works for any
/// unit; the output carries the input's unit.
pub fn fwhm_sigma_convert(value: f64, direction: WidthDirection) -> Result<f64> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::domain(format!(
            "width must be positive and finite, got {value}"
        )));
    }
    Ok(match direction {
        WidthDirection::ToSigma => value / FWHM_PER_SIGMA,
        WidthDirection::ToFwhm => value * FWHM_PER_SIGMA,
    })
}

/// Infallible σ from FWHM for internal use where zero widths are legal.
#[inline]
pub fn sigma_from_fwhm(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

#[inline]
pub fn fwhm_from_sigma(sigma: f64) -> f64 {
    sigma * FWHM_PER_SIGMA
}

/// Converts a wavelength linewidth (nm) at a given centre wavelength (nm) to a
/// frequency linewidth in GHz using Δν = c·Δλ/λ².
pub fn wavelength_linewidth_to_frequency(center_nm: f64, width_nm: f64) -> Result<f64> {
    if !(center_nm > 0.0) {
        return Err(Error::domain(format!(
            "centre wavelength must be positive, got {center_nm} nm"
        )));
    }
    if !(width_nm > 0.0) {
        return Err(Error::domain(format!(
            "linewidth must be positive, got {width_nm} nm"
        )));
    }
    if width_nm >= center_nm {
        return Err(Error::domain(format!(
            "linewidth {width_nm} nm is not small compared to centre {center_nm} nm"
        )));
    }
    Ok(SPEED_OF_LIGHT_NM_PER_S * width_nm / (center_nm * center_nm) * 1e-9)
}

/// Inverse of [`wavelength_linewidth_to_frequency`]: GHz linewidth to nm.
pub fn frequency_linewidth_to_wavelength(center_nm: f64, width_ghz: f64) -> Result<f64> {
    if !(center_nm > 0.0) || !(width_ghz > 0.0) {
        return Err(Error::domain("centre and width must be positive"));
    }
    Ok(width_ghz * 1e9 * center_nm * center_nm / SPEED_OF_LIGHT_NM_PER_S)
}

/// Vacuum wavelength (nm) to optical frequency (GHz).
#[inline]
pub fn wavelength_to_frequency(wavelength_nm: f64) -> f64 {
    SPEED_OF_LIGHT_NM_PER_S / wavelength_nm * 1e-9
}

/// Optical frequency (GHz) to vacuum wavelength (nm).
#[inline]
pub fn frequency_to_wavelength(frequency_ghz: f64) -> f64 {
    SPEED_OF_LIGHT_NM_PER_S / (frequency_ghz * 1e9)
}

/// Lifetime-limited (natural) linewidth in MHz, γ = 1/(2π τ).
pub fn lifetime_limited_linewidth_mhz(lifetime_ns: f64) -> Result<f64> {
    if !(lifetime_ns > 0.0) {
        return Err(Error::domain(format!(
            "lifetime must be positive, got {lifetime_ns} ns"
        )));
    }
    Ok(1e3 / (2.0 * std::f64::consts::PI * lifetime_ns))
}
