use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOptions};
use crate::error::{Error, Result};
use crate::imaging::{gaussian, lorentzian, AxisUnit, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineModel {
    Gaussian,
    Lorentzian,
}

impl LineModel {
    pub fn eval(&self, x: f64, center: f64, fwhm: f64) -> f64 {
        match self {
            LineModel::Gaussian => gaussian(x, center, fwhm),
            LineModel::Lorentzian => lorentzian(x, center, fwhm),
        }
    }
}

impl std::str::FromStr for LineModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(LineModel::Gaussian),
            "lorentzian" => Ok(LineModel::Lorentzian),
            other => Err(Error::domain(format!("unknown line model `{other}`"))),
        }
    }
}

/// Peak fit in the spectrum's own axis unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub model: LineModel,
    pub unit: AxisUnit,
    pub center: f64,
    pub center_err: f64,
    pub fwhm: f64,
    pub fwhm_err: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub instrument_fwhm: f64,
    /// Fitted width below 1.2 × the instrument resolution.
    pub instrument_limited: bool,
}

pub const INSTRUMENT_LIMIT_FACTOR: f64 = 1.2;

fn initial_width(x: &[f64], y: &[f64], peak: usize, base: f64) -> f64 {
    let half = base + 0.5 * (y[peak] - base);
    let mut lo = peak;
    while lo > 0 && y[lo] > half {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < y.len() && y[hi] > half {
        hi += 1;
    }
    let w = (x[hi] - x[lo]).abs();
    if w > 0.0 {
        w
    } else {
        (x[x.len() - 1] - x[0]).abs() / 10.0
    }
}

/// Least-squares fit of `offset + amplitude·shape(x; center, fwhm)`.
/// Uncertainties are scaled by the reduced χ².
pub fn fit_line(spectrum: &Spectrum, model: LineModel, instrument_fwhm: f64) -> Result<LineFit> {
    spectrum.validate()?;
    let (x, y) = (&spectrum.x, &spectrum.counts);
    if x.len() < 5 {
        return Err(Error::domain("line fit needs at least 5 points"));
    }
    let peak = (0..y.len()).max_by(|&i, &j| y[i].total_cmp(&y[j])).unwrap_or(0);
    let x_ref = x[peak];
    let xs: Vec<f64> = x.iter().map(|v| v - x_ref).collect();
    let base = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let w0 = initial_width(x, y, peak, base);
    let f = (xs.len(), |p: &[f64], out: &mut [f64]| {
        if !(p[1] > 0.0) {
            return false;
        }
        for ((o, &xi), &yi) in out.iter_mut().zip(&xs).zip(y) {
            *o = p[3] + p[2] * model.eval(xi, p[0], p[1]) - yi;
        }
        true
    });
    let fit = levenberg_marquardt(&f, &[0.0, w0, y[peak] - base, base], &LmOptions::default())?;
    if !fit.converged {
        return Err(Error::FitFailed {
            reason: format!("line fit did not converge in {} iterations", fit.iterations),
            residual_norm: fit.residual_norm(),
        });
    }
    let p = &fit.params;
    let span = (x[x.len() - 1] - x[0]).abs();
    if span < 3.0 * p[1] {
        return Err(Error::domain(format!(
            "spectrum spans {span} but the fitted FWHM is {}; need at least 3 FWHM",
            p[1]
        )));
    }
    let scale = if fit.dof() > 0 { fit.reduced_chi2().sqrt() } else { 0.0 };
    let e = fit.std_errors();
    Ok(LineFit {
        model,
        unit: spectrum.unit,
        center: p[0] + x_ref,
        center_err: e[0] * scale,
        fwhm: p[1],
        fwhm_err: e[1] * scale,
        amplitude: p[2],
        offset: p[3],
        instrument_fwhm,
        instrument_limited: p[1] < INSTRUMENT_LIMIT_FACTOR * instrument_fwhm,
    })
}
