//! Rendering of observables: confocal scans, spectrally resolved cubes around
//! cavities, g²(τ) histograms, excitation scans and emission spectra.

mod cavity;
mod confocal;
mod cube;
mod g2;
pub mod io;
mod psf;
mod spectrum;

pub use cavity::{CavityLayout, MaterialMask, DEFAULT_RAMAN_WAVELENGTH_NM};
pub use confocal::{
    expected_confocal, render_confocal, sample_counts, ConfocalImage, ImageGeometry,
    ImageMetadata,
};
pub use cube::{
    expected_cube, expected_cube_total, material_fraction, render_spectral_cube, CubeSpec,
    SpectralCube, WavelengthAxis,
};
pub use g2::{g2_model, symmetric_delays, synth_g2, G2Histogram, G2Params};
pub use psf::{psf_sigma, PsfSpec};
pub use spectrum::{
    faddeeva, gaussian, linspace, lorentzian, synth_ple, synth_spectrum, voigt, AxisUnit,
    PleSpec, Spectrum, SpectrumMode,
};
