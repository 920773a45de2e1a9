use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::cavity::{CavityLayout, MaterialMask};
use super::confocal::{
    poisson_draw, undersampling_warning, ConfocalImage, ImageGeometry, ImageMetadata,
    PSF_CUTOFF_SIGMAS,
};
use super::psf::PsfSpec;
use crate::activation::Emitter;
use crate::error::{Error, Result};
use crate::foundation::units::{frequency_to_wavelength, sigma_from_fwhm};
use crate::foundation::RandomSeed;
use crate::par;

/// Uniform wavelength bins; bin `k` spans `[start + k·step, start + (k+1)·step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthAxis {
    pub start_nm: f64,
    pub step_nm: f64,
    pub bins: usize,
}

impl WavelengthAxis {
    pub fn new(start_nm: f64, stop_nm: f64, bins: usize) -> Result<Self> {
        let a = WavelengthAxis {
            start_nm,
            step_nm: (stop_nm - start_nm) / bins.max(1) as f64,
            bins,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 || !(self.step_nm > 0.0) || !(self.start_nm > 0.0) {
            return Err(Error::domain(
                "wavelength axis needs bins > 0, a positive start and strictly increasing bins",
            ));
        }
        Ok(())
    }

    pub fn stop_nm(&self) -> f64 {
        self.start_nm + self.step_nm * self.bins as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.start_nm + (k as f64 + 0.5) * self.step_nm
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let lo = self.start_nm + k as f64 * self.step_nm;
        (lo, lo + self.step_nm)
    }

    pub fn contains(&self, wavelength_nm: f64) -> bool {
        wavelength_nm >= self.start_nm && wavelength_nm < self.stop_nm()
    }

    pub fn bin_of(&self, wavelength_nm: f64) -> Option<usize> {
        self.contains(wavelength_nm)
            .then(|| (((wavelength_nm - self.start_nm) / self.step_nm) as usize).min(self.bins - 1))
    }

    /// Bins whose centre lies in `[lo, hi]`.
    pub fn band(&self, lo_nm: f64, hi_nm: f64) -> std::ops::Range<usize> {
        let first = (0..self.bins).find(|&k| self.center(k) >= lo_nm).unwrap_or(self.bins);
        let end = (0..self.bins)
            .rev()
            .find(|&k| self.center(k) <= hi_nm)
            .map_or(0, |k| k + 1);
        first..end.max(first)
    }

    /// Fraction of a Gaussian line falling in each bin.
    pub fn gaussian_line(&self, center_nm: f64, fwhm_nm: f64) -> Vec<f64> {
        let s = sigma_from_fwhm(fwhm_nm) * std::f64::consts::SQRT_2;
        let cdf = |x: f64| 0.5 * (1.0 + erf((x - center_nm) / s));
        (0..self.bins)
            .map(|k| {
                let (lo, hi) = self.edges(k);
                cdf(hi) - cdf(lo)
            })
            .collect()
    }
}

/// Everything needed to render a spectrally resolved scan around a cavity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeSpec {
    pub geometry: ImageGeometry,
    pub axis: WavelengthAxis,
    /// PSF at the pump wavelength, used for the Raman channel.
    pub pump_psf: PsfSpec,
    pub zpl_psf: PsfSpec,
    /// Raman rate from unpatterned diamond, kcts/s.
    pub raman_rate_kcps: f64,
    pub raman_fwhm_nm: f64,
    /// Room-temperature ZPL width.
    pub zpl_fwhm_nm: f64,
    /// Nominal ZPL position; emitters use their own centre.
    pub zpl_nominal_nm: f64,
    pub background_kcps_per_nm: f64,
}

impl CubeSpec {
    pub fn new(geometry: ImageGeometry, na: f64) -> Result<Self> {
        let s = CubeSpec {
            geometry,
            axis: WavelengthAxis::new(560.0, 760.0, 400)?,
            pump_psf: PsfSpec::new(na, 532.0)?,
            zpl_psf: PsfSpec::new(na, 737.0)?,
            raman_rate_kcps: 20.0,
            raman_fwhm_nm: 0.5,
            zpl_fwhm_nm: 5.0,
            zpl_nominal_nm: 738.3,
            background_kcps_per_nm: 0.005,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.axis.validate()?;
        self.pump_psf.validate()?;
        self.zpl_psf.validate()?;
        if !(self.raman_rate_kcps >= 0.0) || !(self.background_kcps_per_nm >= 0.0) {
            return Err(Error::domain("rates must be >= 0"));
        }
        if !(self.raman_fwhm_nm > 0.0) || !(self.zpl_fwhm_nm > 0.0) {
            return Err(Error::domain("line widths must be > 0"));
        }
        Ok(())
    }
}

/// Counts per (pixel, wavelength bin), pixel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCube {
    pub geometry: ImageGeometry,
    pub axis: WavelengthAxis,
    pub counts: Vec<u64>,
    #[serde(default)]
    pub metadata: ImageMetadata,
}

impl SpectralCube {
    pub fn new(geometry: ImageGeometry, axis: WavelengthAxis, counts: Vec<u64>) -> Result<Self> {
        geometry.validate()?;
        axis.validate()?;
        if counts.len() != geometry.len() * axis.bins {
            return Err(Error::domain("cube counts do not match geometry × bins"));
        }
        Ok(SpectralCube {
            geometry,
            axis,
            counts,
            metadata: ImageMetadata::default(),
        })
    }

    pub fn spectrum_at(&self, pixel: usize) -> &[u64] {
        &self.counts[pixel * self.axis.bins..(pixel + 1) * self.axis.bins]
    }

    /// Image summed over a range of bins.
    pub fn sum_bins(&self, bins: std::ops::Range<usize>) -> ConfocalImage {
        let counts = (0..self.geometry.len())
            .map(|p| self.spectrum_at(p)[bins.clone()].iter().sum())
            .collect();
        ConfocalImage {
            geometry: self.geometry,
            counts,
            metadata: self.metadata.clone(),
        }
    }

    /// The image in the bin containing `wavelength_nm`.
    pub fn slice(&self, wavelength_nm: f64) -> Result<ConfocalImage> {
        let k = self.axis.bin_of(wavelength_nm).ok_or_else(|| {
            Error::domain(format!("{wavelength_nm} nm is outside the cube's axis"))
        })?;
        Ok(self.sum_bins(k..k + 1))
    }

    /// The image summed over bins whose centre lies in `[lo, hi]`.
    pub fn slice_band(&self, lo_nm: f64, hi_nm: f64) -> Result<ConfocalImage> {
        let r = self.axis.band(lo_nm, hi_nm);
        if r.is_empty() {
            return Err(Error::domain(format!(
                "band [{lo_nm}, {hi_nm}] nm contains no bins"
            )));
        }
        Ok(self.sum_bins(r))
    }

    pub fn total_image(&self) -> ConfocalImage {
        self.sum_bins(0..self.axis.bins)
    }
}

fn supersample_step(mask: &MaterialMask, sigma: f64) -> f64 {
    let base = sigma / 12.0;
    match *mask {
        MaterialMask::L3 { hole_radius_nm, .. } => base.min(hole_radius_nm / 6.0),
        MaterialMask::Ellipse {
            semi_axis_x_nm,
            semi_axis_y_nm,
        } => base.min(semi_axis_x_nm.min(semi_axis_y_nm) / 6.0),
        MaterialMask::Bulk => base,
    }
}

fn gaussian_weights(center: f64, grid0: f64, h: f64, n: usize, sigma: f64) -> (usize, Vec<f64>) {
    let reach = 4.0 * sigma;
    let lo = (((center - reach - grid0) / h).floor().max(0.0) as usize).min(n);
    let hi = (((center + reach - grid0) / h).ceil().max(0.0) as usize + 1).min(n);
    let mut w: Vec<f64> = (lo..hi)
        .map(|i| {
            let d = grid0 + i as f64 * h - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        w.iter_mut().for_each(|x| *x /= total);
    }
    (lo, w)
}

/// Fraction of the PSF (normalized Gaussian of width `sigma`) that falls on
/// material, per pixel. Computed on a supersampled mask grid with separable
/// weights.
pub fn material_fraction(
    cavity: &CavityLayout,
    sigma: f64,
    geometry: &ImageGeometry,
) -> Vec<f64> {
    let h = supersample_step(&cavity.mask, sigma);
    let margin = 4.0 * sigma + h;
    // Mask nodes are aligned with the cavity centre so the sampled mask keeps
    // the cavity's symmetry.
    let align = |lo: f64, c: f64| c - ((c - lo) / h).ceil() * h;
    let x0 = align(geometry.origin.x - margin, cavity.center.x);
    let y0 = align(geometry.origin.y - margin, cavity.center.y);
    let fmax = geometry.field_max();
    let nx = ((fmax.x + margin - x0) / h).ceil() as usize + 1;
    let ny = ((fmax.y + margin - y0) / h).ceil() as usize + 1;
    let mask: Vec<Vec<f64>> = par::map_indexed(ny, |j| {
        let y = y0 + j as f64 * h;
        (0..nx)
            .map(|i| {
                let p = crate::foundation::Point2D::new(x0 + i as f64 * h, y);
                if cavity.is_material(p) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    });
    let col_w: Vec<(usize, Vec<f64>)> = (0..geometry.width)
        .map(|c| gaussian_weights(geometry.pixel_center(0, c).x, x0, h, nx, sigma))
        .collect();
    let row_sums: Vec<Vec<f64>> = par::map_slice(&mask, |_, m| {
        col_w
            .iter()
            .map(|(lo, w)| w.iter().zip(&m[*lo..]).map(|(a, b)| a * b).sum())
            .collect()
    });
    let rows = par::map_indexed(geometry.height, |r| {
        let (lo, w) = gaussian_weights(geometry.pixel_center(r, 0).y, y0, h, ny, sigma);
        (0..geometry.width)
            .map(|c| {
                w.iter()
                    .enumerate()
                    .map(|(k, wk)| wk * row_sums[lo + k][c])
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    rows.into_iter().flatten().collect()
}

struct Components {
    material: Vec<f64>,
    raman_line: Vec<f64>,
    /// Per emitter: spatial weights per pixel and line shape per bin.
    emitters: Vec<(Vec<f64>, Vec<f64>)>,
}

fn components(emitters: &[Emitter], cavity: &CavityLayout, spec: &CubeSpec) -> Result<Components> {
    spec.validate()?;
    cavity.validate()?;
    let axis = spec.axis;
    if !axis.contains(cavity.raman_wavelength_nm) {
        return Err(Error::domain(format!(
            "wavelength axis [{}, {}) nm misses the Raman line at {} nm",
            axis.start_nm,
            axis.stop_nm(),
            cavity.raman_wavelength_nm
        )));
    }
    if !axis.contains(spec.zpl_nominal_nm) {
        return Err(Error::domain(format!(
            "wavelength axis [{}, {}) nm misses the ZPL band at {} nm",
            axis.start_nm,
            axis.stop_nm(),
            spec.zpl_nominal_nm
        )));
    }
    let g = spec.geometry;
    let zpl_sigma = spec.zpl_psf.gaussian_sigma_nm();
    let cutoff2 = (PSF_CUTOFF_SIGMAS * zpl_sigma).powi(2);
    let mut per_emitter = Vec::with_capacity(emitters.len());
    for e in emitters {
        let center_nm = frequency_to_wavelength(e.zpl_center_ghz);
        if !axis.contains(center_nm) {
            return Err(Error::domain(format!(
                "emitter ZPL at {center_nm:.2} nm lies outside the wavelength axis"
            )));
        }
        let p = e.position.lateral();
        let spatial = (0..g.len())
            .map(|i| {
                let d2 = (g.pixel_center(i / g.width, i % g.width) - p).norm().powi(2);
                if d2 > cutoff2 {
                    0.0
                } else {
                    e.brightness_kcps * (-d2 / (2.0 * zpl_sigma * zpl_sigma)).exp()
                }
            })
            .collect();
        per_emitter.push((spatial, axis.gaussian_line(center_nm, spec.zpl_fwhm_nm)));
    }
    Ok(Components {
        material: material_fraction(cavity, spec.pump_psf.gaussian_sigma_nm(), &g),
        raman_line: axis.gaussian_line(cavity.raman_wavelength_nm, spec.raman_fwhm_nm),
        emitters: per_emitter,
    })
}

/// Expected counts per (pixel, bin).
pub fn expected_cube(
    emitters: &[Emitter],
    cavity: &CavityLayout,
    spec: &CubeSpec,
) -> Result<Vec<f64>> {
    let c = components(emitters, cavity, spec)?;
    let bins = spec.axis.bins;
    let bg = spec.background_kcps_per_nm * spec.axis.step_nm;
    let dwell = spec.geometry.dwell_ms;
    let mut out = vec![0.0; spec.geometry.len() * bins];
    par::for_each_chunk_mut(&mut out, bins, |p, spectrum| {
        let raman = spec.raman_rate_kcps * c.material[p];
        for (k, v) in spectrum.iter_mut().enumerate() {
            let zpl: f64 = c.emitters.iter().map(|(s, l)| s[p] * l[k]).sum();
            *v = dwell * (bg + raman * c.raman_line[k] + zpl);
        }
    });
    Ok(out)
}

/// Expected image summed over the whole axis, from the combined rate model
/// rather than from the cube.
pub fn expected_cube_total(
    emitters: &[Emitter],
    cavity: &CavityLayout,
    spec: &CubeSpec,
) -> Result<Vec<f64>> {
    let c = components(emitters, cavity, spec)?;
    let range = spec.axis.stop_nm() - spec.axis.start_nm;
    let raman_in: f64 = c.raman_line.iter().sum();
    let zpl_in: Vec<f64> = c.emitters.iter().map(|(_, l)| l.iter().sum()).collect();
    Ok((0..spec.geometry.len())
        .map(|p| {
            let zpl: f64 = c.emitters.iter().zip(&zpl_in).map(|((s, _), f)| s[p] * f).sum();
            spec.geometry.dwell_ms
                * (spec.background_kcps_per_nm * range
                    + spec.raman_rate_kcps * c.material[p] * raman_in
                    + zpl)
        })
        .collect())
}

/// Renders a spectrally resolved scan with a Raman channel from the material
/// mask and a ZPL channel from the emitters.
pub fn render_spectral_cube(
    emitters: &[Emitter],
    cavity: &CavityLayout,
    spec: &CubeSpec,
    seed: &RandomSeed,
) -> Result<SpectralCube> {
    let expected = expected_cube(emitters, cavity, spec)?;
    let bins = spec.axis.bins;
    let mut counts = vec![0u64; expected.len()];
    par::for_each_chunk_mut(&mut counts, bins, |p, out| {
        let mut rng = seed.child(p as u64).rng();
        for (k, v) in out.iter_mut().enumerate() {
            *v = poisson_draw(expected[p * bins + k], &mut rng);
        }
    });
    let mut cube = SpectralCube::new(spec.geometry, spec.axis, counts)?;
    let sigma = spec.zpl_psf.gaussian_sigma_nm();
    cube.metadata = ImageMetadata {
        psf_sigma_nm: Some(sigma),
        wavelength_nm: None,
        warnings: undersampling_warning(&spec.geometry, sigma).into_iter().collect(),
    };
    Ok(cube)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foundation::{Point2D, Point3D};
    use crate::foundation::units::wavelength_to_frequency;

    fn setup() -> (CavityLayout, CubeSpec) {
        let cavity = CavityLayout::l3(Point2D::new(5000.0, 5000.0), 250.0, 70.0).unwrap();
        let g = ImageGeometry::centered(cavity.center, 40.0, 25, 1.0);
        (cavity, CubeSpec::new(g, 1.3).unwrap())
    }

    fn emitter_at(p: Point2D) -> Emitter {
        Emitter {
            position: Point3D::new(p.x, p.y, 60.0),
            zpl_center_ghz: wavelength_to_frequency(737.0),
            homogeneous_fwhm_mhz: 200.0,
            brightness_kcps: 30.0,
        }
    }

    #[test]
    fn bulk_fraction_is_one() {
        let (mut cavity, spec) = setup();
        cavity.mask = MaterialMask::Bulk;
        cavity.mode_maxima = vec![Point2D::ORIGIN];
        let f = material_fraction(&cavity, 90.0, &spec.geometry);
        assert!(f.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn l3_raman_peaks_at_the_defect() {
        let (cavity, spec) = setup();
        let f = material_fraction(&cavity, spec.pump_psf.gaussian_sigma_nm(), &spec.geometry);
        let center = f[12 * 25 + 12];
        let corner = f[0];
        assert!(center > corner + 0.1, "{center} vs {corner}");
        assert!(center < 1.0);
    }

    #[test]
    fn slices_sum_to_combined_model() {
        let (cavity, spec) = setup();
        let em = [emitter_at(cavity.center + Point2D::new(4.0, 48.0))];
        let cube = expected_cube(&em, &cavity, &spec).unwrap();
        let total = expected_cube_total(&em, &cavity, &spec).unwrap();
        for (p, t) in total.iter().enumerate() {
            let s: f64 = cube[p * spec.axis.bins..(p + 1) * spec.axis.bins].iter().sum();
            assert!((s - t).abs() < 1e-9 * t.max(1.0), "{s} vs {t}");
        }
    }

    #[test]
    fn axis_must_cover_lines() {
        let (cavity, mut spec) = setup();
        spec.axis = WavelengthAxis::new(600.0, 760.0, 100).unwrap();
        assert!(render_spectral_cube(&[], &cavity, &spec, &RandomSeed::new(1)).is_err());
        spec.axis = WavelengthAxis::new(560.0, 700.0, 100).unwrap();
        assert!(render_spectral_cube(&[], &cavity, &spec, &RandomSeed::new(1)).is_err());
    }

    #[test]
    fn no_emitters_means_flat_zpl_band() {
        let (cavity, spec) = setup();
        let cube = render_spectral_cube(&[], &cavity, &spec, &RandomSeed::new(2)).unwrap();
        let zpl = cube.slice_band(733.0, 743.0).unwrap();
        let expected = spec.background_kcps_per_nm * 10.0 * spec.geometry.dwell_ms;
        let mean = zpl.total() as f64 / zpl.counts.len() as f64;
        assert!((mean - expected).abs() < 4.0 * (expected / 625.0).sqrt(), "{mean}");
        let again = render_spectral_cube(&[], &cavity, &spec, &RandomSeed::new(2)).unwrap();
        assert_eq!(cube, again);
    }
}
