//! Monte Carlo simulation and statistical analysis of focused-ion-beam
//! creation of single quantum emitters in diamond nanostructures.
//!
//! The forward model runs beam + straggle ([`implantation`]) through
//! conversion to emitters ([`activation`]) into rendered observables
//! ([`imaging`]). The inverse pipeline ([`analysis`]) localizes, registers and
//! fits those observables, and [`campaign`] ties both into reproducible
//! simulated experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod foundation;
pub mod activation;
pub mod campaign;
pub mod analysis;
pub mod imaging;
pub mod implantation;
pub mod par;

pub use error::{Error, Result};
