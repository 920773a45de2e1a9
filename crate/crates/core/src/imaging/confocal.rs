use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::psf::PsfSpec;
use crate::activation::Emitter;
use crate::error::{Error, Result};
use crate::foundation::{Point2D, RandomSeed, SimRng};
use crate::par;

/// PSF contributions beyond this many σ are dropped.
pub(crate) const PSF_CUTOFF_SIGMAS: f64 = 6.0;

/// Pixel grid of a raster scan. Pixel `(row, col)` is centred at
/// `origin + (col·pitch, row·pitch)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub origin: Point2D,
    pub pixel_pitch_nm: f64,
    pub width: usize,
    pub height: usize,
    pub dwell_ms: f64,
}

impl ImageGeometry {
    /// Square grid of `n × n` pixels centred on `center`.
    pub fn centered(center: Point2D, pixel_pitch_nm: f64, n: usize, dwell_ms: f64) -> Self {
        let half = (n as f64 - 1.0) / 2.0 * pixel_pitch_nm;
        ImageGeometry {
            origin: Point2D::new(center.x - half, center.y - half),
            pixel_pitch_nm,
            width: n,
            height: n,
            dwell_ms,
        }
    }

    /// Grid with pixel centres covering `[min, max]` in both axes.
    pub fn covering(min: Point2D, max: Point2D, pixel_pitch_nm: f64, dwell_ms: f64) -> Self {
        let w = ((max.x - min.x) / pixel_pitch_nm).floor().max(0.0) as usize + 1;
        let h = ((max.y - min.y) / pixel_pitch_nm).floor().max(0.0) as usize + 1;
        ImageGeometry {
            origin: min,
            pixel_pitch_nm,
            width: w,
            height: h,
            dwell_ms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_pitch_nm > 0.0) {
            return Err(Error::domain("pixel pitch must be > 0"));
        }
        if !(self.dwell_ms > 0.0) {
            return Err(Error::domain("dwell time must be > 0"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::domain("image must have at least one pixel"));
        }
        if !self.origin.is_finite() {
            return Err(Error::domain("image origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Point2D {
        Point2D::new(
            self.origin.x + col as f64 * self.pixel_pitch_nm,
            self.origin.y + row as f64 * self.pixel_pitch_nm,
        )
    }

    /// Fractional (col, row) coordinates of a point.
    pub fn to_pixel(&self, p: Point2D) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.pixel_pitch_nm,
            (p.y - self.origin.y) / self.pixel_pitch_nm,
        )
    }

    pub fn field_max(&self) -> Point2D {
        self.pixel_center(self.height - 1, self.width - 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psf_sigma_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Photon counts on a pixel grid, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfocalImage {
    pub geometry: ImageGeometry,
    pub counts: Vec<u64>,
    #[serde(default)]
    pub metadata: ImageMetadata,
}

impl ConfocalImage {
    pub fn new(geometry: ImageGeometry, counts: Vec<u64>) -> Result<Self> {
        geometry.validate()?;
        if counts.len() != geometry.len() {
            return Err(Error::domain(format!(
                "{} counts for a {}x{} grid",
                counts.len(),
                geometry.width,
                geometry.height
            )));
        }
        Ok(ConfocalImage {
            geometry,
            counts,
            metadata: ImageMetadata::default(),
        })
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.geometry.width + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn is_undersampled(&self) -> bool {
        !self.metadata.warnings.is_empty()
    }
}

pub(crate) fn poisson_draw(lambda: f64, rng: &mut SimRng) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    match Poisson::new(lambda) {
        Ok(d) => d.sample(rng) as u64,
        Err(_) => 0,
    }
}

pub(crate) fn undersampling_warning(geometry: &ImageGeometry, sigma: f64) -> Option<String> {
    (geometry.pixel_pitch_nm > sigma).then(|| {
        format!(
            "pixel pitch {:.1} nm exceeds PSF sigma {:.1} nm; image is undersampled",
            geometry.pixel_pitch_nm, sigma
        )
    })
}

/// Point sources (lateral position, peak rate in kcts/s) sorted by y so that
/// each row only visits sources within the PSF cutoff.
pub(crate) struct SourceIndex {
    sources: Vec<(Point2D, f64)>,
    sigma: f64,
}

impl SourceIndex {
    pub(crate) fn new(mut sources: Vec<(Point2D, f64)>, sigma: f64) -> Self {
        sources.sort_by(|a, b| a.0.y.total_cmp(&b.0.y));
        SourceIndex { sources, sigma }
    }

    pub(crate) fn from_emitters(emitters: &[Emitter], sigma: f64) -> Self {
        Self::new(
            emitters
                .iter()
                .map(|e| (e.position.lateral(), e.brightness_kcps))
                .collect(),
            sigma,
        )
    }

    fn row_sources(&self, y: f64) -> &[(Point2D, f64)] {
        let reach = PSF_CUTOFF_SIGMAS * self.sigma;
        let lo = self.sources.partition_point(|s| s.0.y < y - reach);
        let hi = self.sources.partition_point(|s| s.0.y <= y + reach);
        &self.sources[lo..hi]
    }

    /// Sum of peak-normalized Gaussian contributions (kcts/s) at `p`.
    pub(crate) fn rate_at(&self, p: Point2D) -> f64 {
        let reach2 = (PSF_CUTOFF_SIGMAS * self.sigma).powi(2);
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        self.row_sources(p.y)
            .iter()
            .map(|&(q, b)| {
                let d2 = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
                if d2 > reach2 {
                    0.0
                } else {
                    b * (-d2 * inv).exp()
                }
            })
            .sum()
    }
}

/// Expected counts per pixel: dwell·(background + Σ brightness·exp(−d²/2σ²)).
pub fn expected_confocal(
    emitters: &[Emitter],
    psf: &PsfSpec,
    background_kcps: f64,
    geometry: &ImageGeometry,
) -> Result<Vec<f64>> {
    psf.validate()?;
    geometry.validate()?;
    if !(background_kcps >= 0.0) {
        return Err(Error::domain("background rate must be >= 0"));
    }
    let index = SourceIndex::from_emitters(emitters, psf.gaussian_sigma_nm());
    let g = *geometry;
    let rows = par::map_indexed(g.height, |r| {
        (0..g.width)
            .map(|c| g.dwell_ms * (background_kcps + index.rate_at(g.pixel_center(r, c))))
            .collect::<Vec<f64>>()
    });
    Ok(rows.into_iter().flatten().collect())
}

/// Draws Poisson counts for every pixel from its own child seed.
pub fn sample_counts(expected: &[f64], seed: &RandomSeed) -> Vec<u64> {
    par::map_slice(expected, |i, &lambda| {
        poisson_draw(lambda, &mut seed.child(i as u64).rng())
    })
}

/// Renders a shot-noise-limited confocal scan. kcts/s × ms = counts.
pub fn render_confocal(
    emitters: &[Emitter],
    psf: &PsfSpec,
    background_kcps: f64,
    geometry: &ImageGeometry,
    seed: &RandomSeed,
) -> Result<ConfocalImage> {
    let expected = expected_confocal(emitters, psf, background_kcps, geometry)?;
    let sigma = psf.gaussian_sigma_nm();
    let mut image = ConfocalImage::new(*geometry, sample_counts(&expected, seed))?;
    image.metadata = ImageMetadata {
        psf_sigma_nm: Some(sigma),
        wavelength_nm: Some(psf.wavelength_nm),
        warnings: undersampling_warning(geometry, sigma).into_iter().collect(),
    };
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foundation::Point3D;

    fn emitter(x: f64, y: f64, b: f64) -> Emitter {
        Emitter {
            position: Point3D::new(x, y, 50.0),
            zpl_center_ghz: 406_776.0,
            homogeneous_fwhm_mhz: 200.0,
            brightness_kcps: b,
        }
    }

    fn psf() -> PsfSpec {
        PsfSpec::new(1.3, 737.0).unwrap()
    }

    #[test]
    fn background_only() {
        let g = ImageGeometry::centered(Point2D::ORIGIN, 50.0, 40, 1.0);
        let e = expected_confocal(&[], &psf(), 1.0, &g).unwrap();
        assert!(e.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let img = render_confocal(&[], &psf(), 1.0, &g, &RandomSeed::new(1)).unwrap();
        let mean = img.total() as f64 / g.len() as f64;
        assert!((mean - 1.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn peak_pixel_brightness() {
        let g = ImageGeometry::centered(Point2D::ORIGIN, 50.0, 21, 1.0);
        let e = expected_confocal(&[emitter(0.0, 0.0, 30.0)], &psf(), 0.0, &g).unwrap();
        assert!((e[10 * 21 + 10] - 30.0).abs() < 1e-12);
        let max = e.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, e[10 * 21 + 10]);
    }

    #[test]
    fn deterministic_and_flags_undersampling() {
        let g = ImageGeometry::centered(Point2D::ORIGIN, 200.0, 10, 1.0);
        let em = [emitter(10.0, -30.0, 30.0)];
        let a = render_confocal(&em, &psf(), 1.0, &g, &RandomSeed::new(5)).unwrap();
        let b = render_confocal(&em, &psf(), 1.0, &g, &RandomSeed::new(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.is_undersampled());
        let fine = ImageGeometry::centered(Point2D::ORIGIN, 100.0, 10, 1.0);
        let c = render_confocal(&em, &psf(), 1.0, &fine, &RandomSeed::new(5)).unwrap();
        assert!(!c.is_undersampled());
    }

    #[test]
    fn bad_geometry() {
        let mut g = ImageGeometry::centered(Point2D::ORIGIN, 50.0, 5, 1.0);
        g.dwell_ms = 0.0;
        assert!(render_confocal(&[], &psf(), 1.0, &g, &RandomSeed::new(1)).is_err());
    }
}
