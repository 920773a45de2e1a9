use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::lm::{curve_fit, LmOptions};
use crate::error::{Error, Result};

/// Rayleigh (2D radial) distribution fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighFit {
    pub sigma_hat_nm: f64,
    /// Standard error of σ̂.
    pub sigma_err_nm: f64,
    /// σ̂·√(π/2).
    pub mean_r_nm: f64,
    /// σ̂²·(4−π)/2.
    pub variance_r_nm2: f64,
    /// √variance, the spread of individual distances.
    pub std_r_nm: f64,
    pub n: usize,
}

impl RayleighFit {
    pub fn from_sigma(sigma: f64, sigma_err: f64, n: usize) -> Self {
        let variance = sigma * sigma * (4.0 - PI) / 2.0;
        RayleighFit {
            sigma_hat_nm: sigma,
            sigma_err_nm: sigma_err,
            mean_r_nm: sigma * (PI / 2.0).sqrt(),
            variance_r_nm2: variance,
            std_r_nm: variance.sqrt(),
            n,
        }
    }
}

fn check(distances: &[f64]) -> Result<()> {
    if distances.len() < 10 {
        return Err(Error::domain(format!(
            "Rayleigh fit needs at least 10 distances, got {}",
            distances.len()
        )));
    }
    if let Some(d) = distances.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
        return Err(Error::domain(format!("distance {d} is negative or not finite")));
    }
    Ok(())
}

/// Closed-form maximum-likelihood fit, σ̂ = √(Σr²/2n).
pub fn fit_rayleigh(distances: &[f64]) -> Result<RayleighFit> {
    check(distances)?;
    let n = distances.len();
    let s2: f64 = distances.iter().map(|r| r * r).sum();
    let sigma = (s2 / (2.0 * n as f64)).sqrt();
    Ok(RayleighFit::from_sigma(sigma, sigma / (4.0 * n as f64).sqrt(), n))
}

/// Rayleigh density at `r`.
pub fn rayleigh_pdf(r: f64, sigma: f64) -> f64 {
    if r < 0.0 {
        return 0.0;
    }
    r / (sigma * sigma) * (-r * r / (2.0 * sigma * sigma)).exp()
}

/// Least-squares fit of the density to a histogram with `bins` equal bins
/// from 0 to the largest distance, as drawn in distance histograms.
pub fn fit_rayleigh_binned(distances: &[f64], bins: usize) -> Result<RayleighFit> {
    check(distances)?;
    if bins < 3 {
        return Err(Error::domain("binned Rayleigh fit needs at least 3 bins"));
    }
    let n = distances.len();
    let max = distances.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::domain("all distances are zero"));
    }
    let width = max / bins as f64;
    let mut counts = vec![0.0; bins];
    for &d in distances {
        counts[((d / width) as usize).min(bins - 1)] += 1.0;
    }
    let centers: Vec<f64> = (0..bins).map(|k| (k as f64 + 0.5) * width).collect();
    let density: Vec<f64> = counts.iter().map(|c| c / (n as f64 * width)).collect();
    let sigma_err: Vec<f64> = counts
        .iter()
        .map(|c| c.max(1.0).sqrt() / (n as f64 * width))
        .collect();
    let start = fit_rayleigh(distances)?.sigma_hat_nm;
    let fit = curve_fit(
        |r, p| rayleigh_pdf(r, p[0].abs()),
        &centers,
        &density,
        Some(&sigma_err),
        &[start],
        &LmOptions::default(),
    )?;
    let sigma = fit.params[0].abs();
    Ok(RayleighFit::from_sigma(sigma, fit.std_errors()[0], n))
}
