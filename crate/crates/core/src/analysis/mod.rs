//! The inverse pipeline: spot localization, single-site filtering, lattice
//! registration, Rayleigh statistics, yield estimation, g² and line fits, and
//! cavity targeting.

mod g2fit;
mod grid;
mod line;
pub mod lm;
mod localize;
mod rayleigh;
mod stats;
mod targeting;
mod yield_est;

pub use g2fit::{fit_g2, Estimate, G2Fit, Z95};
pub use grid::{fit_affine_grid, GridFit, GridOptions};
pub use line::{fit_line, LineFit, LineModel, INSTRUMENT_LIMIT_FACTOR};
pub use localize::{
    filter_single_sites, gaussian_2d, localize_sites, LocalizationResult, Localizations,
    LocalizeOptions,
};
pub use rayleigh::{fit_rayleigh, fit_rayleigh_binned, rayleigh_pdf, RayleighFit};
pub use stats::{poisson_chi_square, ChiSquareTest};
pub use targeting::{estimate_targeting, Centroid, TargetingOptions, TargetingResult};
pub use yield_est::{estimate_yield, YieldEstimate};
