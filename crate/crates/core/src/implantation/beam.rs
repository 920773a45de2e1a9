use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundation::units::{sigma_from_fwhm, CM2_PER_UM2, ELEMENTARY_CHARGE_C};

/// Machine energy range of the implanter, keV.
pub const MIN_ENERGY_KEV: f64 = 10.0;
pub const MAX_ENERGY_KEV: f64 = 200.0;

/// Focused ion beam settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamSpec {
    pub fwhm_nm: f64,
    pub energy_kev: f64,
    pub current_pa: f64,
    /// Per-shot Gaussian pointing error σ. Zero disables it.
    #[serde(default)]
    pub pointing_sigma_nm: f64,
}

impl Default for BeamSpec {
    fn default() -> Self {
        BeamSpec {
            fwhm_nm: 40.0,
            energy_kev: 100.0,
            current_pa: 0.5,
            pointing_sigma_nm: 0.0,
        }
    }
}

impl BeamSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fwhm_nm >= 0.0) {
            return Err(Error::domain(format!("beam FWHM must be >= 0, got {}", self.fwhm_nm)));
        }
        if !(MIN_ENERGY_KEV..=MAX_ENERGY_KEV).contains(&self.energy_kev) {
            return Err(Error::OutOfRange {
                quantity: "energy_kev",
                value: self.energy_kev,
                min: MIN_ENERGY_KEV,
                max: MAX_ENERGY_KEV,
            });
        }
        if !(self.current_pa > 0.0) {
            return Err(Error::domain(format!("beam current must be > 0, got {} pA", self.current_pa)));
        }
        if !(self.pointing_sigma_nm >= 0.0) {
            return Err(Error::domain("pointing error must be >= 0"));
        }
        Ok(())
    }

    pub fn sigma_nm(&self) -> f64 {
        sigma_from_fwhm(self.fwhm_nm)
    }
}

/// Blanking pulse length in µs that delivers `n_ions` singly charged ions at
/// the given beam current.
pub fn plan_pulse(current_pa: f64, n_ions: u64) -> Result<f64> {
    if !(current_pa > 0.0) {
        return Err(Error::domain(format!("beam current must be > 0, got {current_pa} pA")));
    }
    let seconds = n_ions as f64 * ELEMENTARY_CHARGE_C / (current_pa * 1e-12);
    Ok(seconds * 1e6)
}

/// Expected ion count for an areal dose (cm⁻²) over an area in µm².
pub fn dose_to_ions(dose_per_cm2: f64, area_um2: f64) -> Result<f64> {
    if !(dose_per_cm2 >= 0.0) {
        return Err(Error::domain(format!("dose must be >= 0, got {dose_per_cm2}")));
    }
    if !(area_um2 > 0.0) {
        return Err(Error::domain(format!("area must be > 0, got {area_um2} µm²")));
    }
    Ok(dose_per_cm2 * area_um2 * CM2_PER_UM2)
}

/// Inverse of [`dose_to_ions`].
pub fn ions_to_dose(n_ions: f64, area_um2: f64) -> Result<f64> {
    if !(n_ions >= 0.0) {
        return Err(Error::domain("ion count must be >= 0"));
    }
    if !(area_um2 > 0.0) {
        return Err(Error::domain(format!("area must be > 0, got {area_um2} µm²")));
    }
    Ok(n_ions / (area_um2 * CM2_PER_UM2))
}

/// Lateral σ of the landing distribution: beam σ and straggle σ added in
/// quadrature.
pub fn expected_lateral_sigma(beam: &BeamSpec, straggle_sigma_nm: f64) -> f64 {
    beam.sigma_nm().hypot(straggle_sigma_nm)
}
