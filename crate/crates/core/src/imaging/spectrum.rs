use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use super::confocal::poisson_draw;
use crate::activation::{Emitter, FineStructure};
use crate::error::{Error, Result};
use crate::foundation::units::{
    frequency_to_wavelength, sigma_from_fwhm, wavelength_linewidth_to_frequency,
    wavelength_to_frequency,
};
use crate::foundation::{lifetime_limited_linewidth_mhz, RandomSeed};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisUnit {
    FrequencyGhz,
    DetuningMhz,
    WavelengthNm,
}

impl AxisUnit {
    pub fn column(&self) -> &'static str {
        match self {
            AxisUnit::FrequencyGhz => "frequency_ghz",
            AxisUnit::DetuningMhz => "detuning_mhz",
            AxisUnit::WavelengthNm => "wavelength_nm",
        }
    }

    pub fn from_column(name: &str) -> Option<Self> {
        match name.trim() {
            "frequency_ghz" => Some(AxisUnit::FrequencyGhz),
            "detuning_mhz" => Some(AxisUnit::DetuningMhz),
            "wavelength_nm" => Some(AxisUnit::WavelengthNm),
            _ => None,
        }
    }
}

/// A one-dimensional spectrum or excitation scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub unit: AxisUnit,
    pub x: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Spectrum {
    pub fn validate(&self) -> Result<()> {
        if self.x.len() != self.counts.len() || self.x.is_empty() {
            return Err(Error::domain("spectrum axis and counts differ in length or are empty"));
        }
        if self.x.iter().chain(&self.counts).any(|v| !v.is_finite()) {
            return Err(Error::domain("spectrum contains non-finite values"));
        }
        Ok(())
    }

    /// Re-expresses a frequency axis in wavelength, sorted ascending.
    pub fn to_wavelength(&self) -> Result<Spectrum> {
        match self.unit {
            AxisUnit::WavelengthNm => Ok(self.clone()),
            AxisUnit::FrequencyGhz => {
                let mut pairs: Vec<(f64, f64)> = self
                    .x
                    .iter()
                    .zip(&self.counts)
                    .map(|(&f, &c)| (frequency_to_wavelength(f), c))
                    .collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                Ok(Spectrum {
                    unit: AxisUnit::WavelengthNm,
                    x: pairs.iter().map(|p| p.0).collect(),
                    counts: pairs.iter().map(|p| p.1).collect(),
                })
            }
            AxisUnit::DetuningMhz => Err(Error::domain(
                "a detuning axis has no absolute wavelength",
            )),
        }
    }

    /// Replaces every value with a Poisson draw around it.
    pub fn with_shot_noise(&self, seed: &RandomSeed) -> Spectrum {
        Spectrum {
            unit: self.unit,
            x: self.x.clone(),
            counts: par::map_slice(&self.counts, |i, &c| {
                poisson_draw(c, &mut seed.child(i as u64).rng()) as f64
            }),
        }
    }
}

/// Uniform grid of `points` samples from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![start];
    }
    let step = (stop - start) / (points - 1) as f64;
    (0..points).map(|i| start + i as f64 * step).collect()
}

/// Lorentzian with unit peak.
#[inline]
pub fn lorentzian(x: f64, center: f64, fwhm: f64) -> f64 {
    let u = 2.0 * (x - center) / fwhm;
    1.0 / (1.0 + u * u)
}

/// Gaussian with unit peak.
#[inline]
pub fn gaussian(x: f64, center: f64, fwhm: f64) -> f64 {
    let s = sigma_from_fwhm(fwhm);
    (-(x - center).powi(2) / (2.0 * s * s)).exp()
}

const WEIDEMAN_N: usize = 32;

fn weideman_coefficients() -> &'static (f64, [f64; WEIDEMAN_N]) {
    static C: OnceLock<(f64, [f64; WEIDEMAN_N])> = OnceLock::new();
    C.get_or_init(|| {
        let n = WEIDEMAN_N;
        let m = 2 * n;
        let l = (n as f64 / 2f64.sqrt()).sqrt();
        let f: Vec<(f64, f64)> = (1..m as i64)
            .flat_map(|k| [k, -k])
            .chain([0])
            .map(|k| {
                let theta = k as f64 * PI / m as f64;
                let t = l * (theta / 2.0).tan();
                (theta, (-t * t).exp() * (l * l + t * t))
            })
            .collect();
        let mut a = [0.0; WEIDEMAN_N];
        for (j, aj) in a.iter_mut().enumerate() {
            let order = (j + 1) as f64;
            *aj = f.iter().map(|&(th, v)| v * (order * th).cos()).sum::<f64>() / (2 * m) as f64;
        }
        (l, a)
    })
}

/// Faddeeva function w(z) for Im z ≥ 0 by Weideman's rational expansion.
pub fn faddeeva(z: Complex<f64>) -> Complex<f64> {
    let (l, a) = weideman_coefficients();
    let i = Complex::new(0.0, 1.0);
    let lz = Complex::new(*l, 0.0) - i * z;
    let big_z = (Complex::new(*l, 0.0) + i * z) / lz;
    let mut p = Complex::new(0.0, 0.0);
    for &c in a.iter().rev() {
        p = p * big_z + c;
    }
    2.0 * p / (lz * lz) + Complex::new(1.0 / PI.sqrt(), 0.0) / lz
}

/// Area-normalized Voigt profile: Lorentzian (FWHM `lorentz_fwhm`) convolved
/// with a Gaussian (FWHM `gauss_fwhm`). Either width may be zero.
pub fn voigt(x: f64, lorentz_fwhm: f64, gauss_fwhm: f64) -> f64 {
    let gamma = lorentz_fwhm / 2.0;
    if gauss_fwhm <= 0.0 {
        return gamma / (PI * (x * x + gamma * gamma));
    }
    let s = sigma_from_fwhm(gauss_fwhm);
    if gamma <= 0.0 {
        return (-x * x / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt());
    }
    let z = Complex::new(x, gamma) / (s * 2f64.sqrt());
    faddeeva(z).re / (s * (2.0 * PI).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SpectrumMode {
    /// Each transition keeps its homogeneous Lorentzian width.
    Cryo,
    /// Every emitter is a single phonon-broadened Gaussian line.
    RoomTemperature { fwhm_nm: f64, center_nm: f64 },
}

impl SpectrumMode {
    pub fn room_temperature() -> Self {
        SpectrumMode::RoomTemperature {
            fwhm_nm: 5.0,
            center_nm: 738.3,
        }
    }
}

/// Renders the emission spectrum of `emitters` on a frequency axis (GHz).
/// Line areas equal `brightness·weight·scale`.
pub fn synth_spectrum(
    emitters: &[Emitter],
    fine_structure: &FineStructure,
    resolution_fwhm_ghz: f64,
    mode: SpectrumMode,
    axis_ghz: &[f64],
    scale: f64,
) -> Result<Spectrum> {
    if !(resolution_fwhm_ghz >= 0.0) {
        return Err(Error::domain("instrument resolution must be >= 0"));
    }
    if axis_ghz.is_empty() {
        return Err(Error::domain("spectrum axis is empty"));
    }
    fine_structure.validate()?;
    // (centre GHz, Lorentzian FWHM GHz, extra Gaussian FWHM GHz, area)
    let mut lines: Vec<(f64, f64, f64, f64)> = Vec::new();
    match mode {
        SpectrumMode::Cryo => {
            for e in emitters {
                for t in &fine_structure.transitions {
                    lines.push((
                        e.zpl_center_ghz + t.offset_ghz,
                        e.homogeneous_fwhm_mhz * 1e-3,
                        0.0,
                        e.brightness_kcps * t.weight * scale,
                    ));
                }
            }
        }
        SpectrumMode::RoomTemperature { fwhm_nm, center_nm } => {
            let width = wavelength_linewidth_to_frequency(center_nm, fwhm_nm)?;
            let center = wavelength_to_frequency(center_nm);
            for e in emitters {
                lines.push((center, 0.0, width, e.brightness_kcps * scale));
            }
        }
    }
    let counts = par::map_slice(axis_ghz, |_, &x| {
        lines
            .iter()
            .map(|&(c, lw, gw, area)| {
                let g = (gw * gw + resolution_fwhm_ghz * resolution_fwhm_ghz).sqrt();
                area * voigt(x - c, lw, g)
            })
            .sum()
    });
    Ok(Spectrum {
        unit: AxisUnit::FrequencyGhz,
        x: axis_ghz.to_vec(),
        counts,
    })
}

/// Photoluminescence-excitation scan settings. The axis is laser detuning in
/// MHz from an arbitrary reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PleSpec {
    pub center_mhz: f64,
    pub fwhm_mhz: f64,
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub points: usize,
    pub peak_counts: f64,
    #[serde(default)]
    pub background_counts: f64,
    pub lifetime_ns: f64,
}

impl PleSpec {
    pub fn validate(&self) -> Result<()> {
        let gamma = lifetime_limited_linewidth_mhz(self.lifetime_ns)?;
        if !(self.fwhm_mhz >= gamma * (1.0 - 1e-12)) {
            return Err(Error::domain(format!(
                "PLE linewidth {} MHz is below the lifetime limit {gamma:.1} MHz",
                self.fwhm_mhz
            )));
        }
        if self.start_mhz > self.center_mhz - 3.0 * self.fwhm_mhz
            || self.stop_mhz < self.center_mhz + 3.0 * self.fwhm_mhz
        {
            return Err(Error::domain("PLE scan must cover the line centre ± 3 FWHM"));
        }
        if self.points < 5 {
            return Err(Error::domain("PLE scan needs at least 5 points"));
        }
        if !(self.peak_counts > 0.0) || !(self.background_counts >= 0.0) {
            return Err(Error::domain("PLE counts must be positive"));
        }
        Ok(())
    }
}

/// Lorentzian excitation profile, optionally with Poisson noise.
pub fn synth_ple(spec: &PleSpec, seed: Option<&RandomSeed>) -> Result<Spectrum> {
    spec.validate()?;
    let x = linspace(spec.start_mhz, spec.stop_mhz, spec.points);
    let counts = x
        .iter()
        .map(|&v| spec.background_counts + spec.peak_counts * lorentzian(v, spec.center_mhz, spec.fwhm_mhz))
        .collect();
    let s = Spectrum {
        unit: AxisUnit::DetuningMhz,
        x,
        counts,
    };
    Ok(match seed {
        Some(seed) => s.with_shot_noise(seed),
        None => s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force convolution on a fine grid as an independent oracle.
    fn voigt_quadrature(x: f64, lw: f64, gw: f64) -> f64 {
        let s = sigma_from_fwhm(gw);
        let g = lw / 2.0;
        let n = 400_000;
        let span = 12.0 * s;
        let h = 2.0 * span / n as f64;
        (0..=n)
            .map(|i| {
                let t = -span + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * (-(t * t) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()) * g
                    / (PI * ((x - t).powi(2) + g * g))
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn faddeeva_matches_quadrature() {
        for &(x, lw, gw) in &[(0.0, 0.126, 34.0), (10.0, 0.126, 34.0), (25.0, 2.0, 10.0), (3.0, 5.0, 5.0)] {
            let a = voigt(x, lw, gw);
            let b = voigt_quadrature(x, lw, gw);
            assert!(((a - b) / b).abs() < 1e-5, "{x}: {a} vs {b}");
        }
    }

    #[test]
    fn faddeeva_at_origin() {
        let w = faddeeva(Complex::new(0.0, 1.0));
        // w(i) = e·erfc(1)
        assert!((w.re - 0.427_583_576_155_807).abs() < 1e-10, "{w}");
    }

    #[test]
    fn zero_instrument_width_is_intrinsic() {
        let e = Emitter {
            position: Default::default(),
            zpl_center_ghz: 406_000.0,
            homogeneous_fwhm_mhz: 126.0,
            brightness_kcps: 1.0,
        };
        let axis = linspace(405_999.0, 406_001.0, 41);
        let s = synth_spectrum(&[e], &FineStructure::c_only(), 0.0, SpectrumMode::Cryo, &axis, 1.0)
            .unwrap();
        for (x, c) in s.x.iter().zip(&s.counts) {
            let l = 0.063 / (PI * ((x - 406_000.0).powi(2) + 0.063 * 0.063));
            assert!(((c - l) / l).abs() < 1e-12);
        }
    }

    #[test]
    fn ple_half_maximum_points() {
        let spec = PleSpec {
            center_mhz: 0.0,
            fwhm_mhz: 126.0,
            start_mhz: -630.0,
            stop_mhz: 630.0,
            points: 201,
            peak_counts: 1000.0,
            background_counts: 0.0,
            lifetime_ns: 1.7,
        };
        let s = synth_ple(&spec, None).unwrap();
        assert_eq!(s.counts[100], 1000.0);
        assert!((lorentzian(63.0, 0.0, 126.0) - 0.5).abs() < 1e-15);
        assert!((lorentzian(-63.0, 0.0, 126.0) - 0.5).abs() < 1e-15);
        let narrow = PleSpec { fwhm_mhz: 50.0, ..spec };
        assert!(synth_ple(&narrow, None).is_err());
        let short = PleSpec { stop_mhz: 300.0, ..spec };
        assert!(synth_ple(&short, None).is_err());
        let a = synth_ple(&spec, Some(&RandomSeed::new(3))).unwrap();
        assert_eq!(a, synth_ple(&spec, Some(&RandomSeed::new(3))).unwrap());
    }
}
