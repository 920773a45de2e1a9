//! From implanted ions to emitters: conversion yield, electron-irradiation
//! enhancement, Poisson emitter counts and per-emitter spectral properties.

mod emitters;
mod yield_surface;

pub use emitters::{
    sample_emitter_count, sample_emitters, Emitter, FineStructure, SpectralPopulation, Transition,
};
pub use yield_surface::{
    apply_irradiation, yield_lookup, IrradiationParams, YieldLookup, YieldModel, YieldSurface,
};
