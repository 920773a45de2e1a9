//! Unit-bearing scalars, geometry, spectral conversions and seeding shared by
//! every other module.

mod geometry;
mod seed;
mod spectral;
pub mod units;

pub use geometry::{apply_affine, AffineTransform2D, Point2D, Point3D};
pub use seed::{RandomSeed, SimRng};
pub use spectral::{SpectralQuantity, SpectralUnit};
pub use units::{
    fwhm_sigma_convert, lifetime_limited_linewidth_mhz, wavelength_linewidth_to_frequency,
    WidthDirection, FWHM_PER_SIGMA,
};
