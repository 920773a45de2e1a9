//! Where ions land: pulse planning, dose arithmetic, and the beam profile
//! convolved with lateral and longitudinal straggle.

mod beam;
mod sampling;
mod straggle;

pub use beam::{
    dose_to_ions, expected_lateral_sigma, ions_to_dose, plan_pulse, BeamSpec, MAX_ENERGY_KEV,
    MIN_ENERGY_KEV,
};
pub use sampling::{sample_area_exposure, sample_ion_positions, ImplantShot};
pub use straggle::{StraggleEntry, StraggleTable};
