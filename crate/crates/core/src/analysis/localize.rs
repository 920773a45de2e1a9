use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOptions, LmResult};
use crate::error::{Error, Result};
use crate::foundation::Point2D;
use crate::imaging::ConfocalImage;
use crate::par;

/// A fitted emitter spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub position: Point2D,
    /// 1σ position uncertainty along x.
    pub err_x_nm: f64,
    pub err_y_nm: f64,
    /// Fitted peak height above background.
    pub peak_counts: f64,
    pub width_sigma_nm: f64,
    pub background_counts: f64,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Localizations {
    pub sites: Vec<LocalizationResult>,
    pub candidates: usize,
    /// Candidates whose fit diverged or left the plausible range.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeOptions {
    /// PSF σ; taken from the image metadata when absent.
    pub psf_sigma_nm: Option<f64>,
    pub min_separation_nm: f64,
    /// Detection threshold in units of the smoothed background noise.
    pub threshold_sigmas: f64,
    /// Fit window half-width in PSF σ.
    pub window_sigmas: f64,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions {
            psf_sigma_nm: None,
            min_separation_nm: 500.0,
            threshold_sigmas: 5.0,
            window_sigmas: 3.0,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn median_of(values: &[f64]) -> f64 {
    median(&mut values.to_vec())
}

fn kernel(sigma_px: f64) -> Vec<f64> {
    let r = (3.0 * sigma_px).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn convolve_axis(data: &[f64], w: usize, h: usize, k: &[f64], along_x: bool) -> Vec<f64> {
    let r = (k.len() / 2) as i64;
    let mut out = vec![0.0; data.len()];
    for row in 0..h {
        for col in 0..w {
            let (mut acc, mut norm) = (0.0, 0.0);
            for (t, kv) in k.iter().enumerate() {
                let off = t as i64 - r;
                let (rr, cc) = if along_x {
                    (row as i64, col as i64 + off)
                } else {
                    (row as i64 + off, col as i64)
                };
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += kv * data[rr as usize * w + cc as usize];
                    norm += kv;
                }
            }
            out[row * w + col] = acc / norm;
        }
    }
    out
}

/// Gaussian-smoothed copy of the image with kernel σ in pixels.
pub(crate) fn smooth(data: &[f64], w: usize, h: usize, sigma_px: f64) -> Vec<f64> {
    let k = kernel(sigma_px);
    let tmp = convolve_axis(data, w, h, &k, true);
    convolve_axis(&tmp, w, h, &k, false)
}

fn is_local_max(s: &[f64], w: usize, h: usize, row: usize, col: usize) -> bool {
    let v = s[row * w + col];
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            if dr == 0 && dc == 0 {
                continue;
            }
            let (r, c) = (row as i64 + dr, col as i64 + dc);
            if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
                continue;
            }
            let n = s[r as usize * w + c as usize];
            let earlier = dr < 0 || (dr == 0 && dc < 0);
            if n > v || (earlier && n == v) {
                return false;
            }
        }
    }
    true
}

/// Pixel values in a window, as (x, y, counts).
pub(crate) fn window(image: &ConfocalImage, center: Point2D, half_nm: f64) -> Vec<(f64, f64, f64)> {
    let g = &image.geometry;
    let (cx, cy) = g.to_pixel(center);
    let half = half_nm / g.pixel_pitch_nm;
    let c0 = (cx - half).ceil().max(0.0) as usize;
    let c1 = ((cx + half).floor().max(-1.0) + 1.0).min(g.width as f64) as usize;
    let r0 = (cy - half).ceil().max(0.0) as usize;
    let r1 = ((cy + half).floor().max(-1.0) + 1.0).min(g.height as f64) as usize;
    let mut out = Vec::new();
    for r in r0..r1 {
        for c in c0..c1 {
            let p = g.pixel_center(r, c);
            out.push((p.x, p.y, image.get(r, c) as f64));
        }
    }
    out
}

/// Parameters `[x, y, amplitude, σ, background]`.
#[inline]
pub fn gaussian_2d(x: f64, y: f64, p: &[f64]) -> f64 {
    let s = p[3];
    p[4] + p[2] * (-((x - p[0]).powi(2) + (y - p[1]).powi(2)) / (2.0 * s * s)).exp()
}

fn weighted<'a>(
    pixels: &'a [(f64, f64, f64)],
    weights: &'a [f64],
) -> (usize, impl Fn(&[f64], &mut [f64]) -> bool + 'a) {
    (pixels.len(), move |p: &[f64], out: &mut [f64]| {
        if !(p[3] > 0.0) {
            return false;
        }
        for ((o, px), w) in out.iter_mut().zip(pixels).zip(weights) {
            *o = (gaussian_2d(px.0, px.1, p) - px.2) * w;
        }
        true
    })
}

/// Poisson maximum-likelihood fit of an isotropic 2D Gaussian plus constant
/// by iteratively reweighted least squares.
pub(crate) fn fit_gaussian_2d(pixels: &[(f64, f64, f64)], p0: [f64; 5]) -> Result<LmResult> {
    let mut weights: Vec<f64> = pixels.iter().map(|p| 1.0 / p.2.max(1.0).sqrt()).collect();
    let mut fit = levenberg_marquardt(&weighted(pixels, &weights), &p0, &LmOptions::default())?;
    for _ in 0..3 {
        weights = pixels
            .iter()
            .map(|px| 1.0 / gaussian_2d(px.0, px.1, &fit.params).max(0.05).sqrt())
            .collect();
        fit = levenberg_marquardt(&weighted(pixels, &weights), &fit.params, &LmOptions::default())?;
    }
    Ok(fit)
}

fn psf_sigma_for(image: &ConfocalImage, opts: &LocalizeOptions) -> Result<f64> {
    let s = opts
        .psf_sigma_nm
        .or(image.metadata.psf_sigma_nm)
        .ok_or_else(|| Error::domain("PSF sigma unknown: set it in options or image metadata"))?;
    if !(s > 0.0) {
        return Err(Error::domain("PSF sigma must be > 0"));
    }
    Ok(s)
}

/// Finds emitter spots above the noise floor and refines each with a 2D
/// Gaussian fit. Spots closer than `min_separation_nm` merge into the
/// brighter one.
pub fn localize_sites(image: &ConfocalImage, opts: &LocalizeOptions) -> Result<Localizations> {
    let sigma = psf_sigma_for(image, opts)?;
    let g = &image.geometry;
    if g.pixel_pitch_nm >= sigma {
        return Err(Error::domain(format!(
            "pixel pitch {} nm must be below the PSF sigma {sigma:.1} nm for localization",
            g.pixel_pitch_nm
        )));
    }
    let (w, h) = (g.width, g.height);
    let raw = image.as_f64();
    let sigma_px = sigma / g.pixel_pitch_nm;
    let s = smooth(&raw, w, h, sigma_px);
    let bg = median_of(&s);
    let k = kernel(sigma_px);
    let k2: f64 = k.iter().map(|v| v * v).sum::<f64>().powi(2);
    let noise = (bg.max(1.0) * k2).sqrt();
    let threshold = bg + opts.threshold_sigmas * noise;

    let mut peaks: Vec<(f64, usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| s[r * w + c] > threshold && is_local_max(&s, w, h, r, c))
        .map(|(r, c)| (s[r * w + c], r, c))
        .collect();
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut accepted: Vec<Point2D> = Vec::new();
    for &(_, r, c) in &peaks {
        let p = g.pixel_center(r, c);
        if accepted.iter().all(|q| q.distance(p) >= opts.min_separation_nm) {
            accepted.push(p);
        }
    }
    accepted.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));

    let half = opts.window_sigmas * sigma;
    let fits = par::map_slice(&accepted, |_, &center| {
        let px = window(image, center, half);
        if px.len() < 10 {
            return None;
        }
        let peak = px.iter().fold(0.0f64, |m, p| m.max(p.2));
        let fit = fit_gaussian_2d(&px, [center.x, center.y, (peak - bg).max(1.0), sigma, bg]).ok()?;
        let p = &fit.params;
        let pos = Point2D::new(p[0], p[1]);
        let plausible = fit.converged
            && p[2] > 0.0
            && p[3] > 0.3 * sigma
            && p[3] < 3.0 * sigma
            && pos.distance(center) < 1.5 * sigma;
        if !plausible {
            return None;
        }
        let e = fit.std_errors();
        (e[0] > 0.0 && e[1] > 0.0).then(|| LocalizationResult {
            position: pos,
            err_x_nm: e[0],
            err_y_nm: e[1],
            peak_counts: p[2],
            width_sigma_nm: p[3],
            background_counts: p[4],
            residual_norm: fit.residual_norm(),
        })
    });
    let candidates = fits.len();
    let sites: Vec<LocalizationResult> = fits.into_iter().flatten().collect();
    Ok(Localizations {
        dropped: candidates - sites.len(),
        candidates,
        sites,
    })
}

/// Keeps sites whose peak intensity lies in [0.5, 1.5] × reference. The
/// reference defaults to the median peak intensity.
pub fn filter_single_sites(
    results: &[LocalizationResult],
    reference_intensity: Option<f64>,
) -> Result<Vec<LocalizationResult>> {
    if results.is_empty() {
        return Ok(Vec::new());
    }
    let reference = match reference_intensity {
        Some(r) => r,
        None => median_of(&results.iter().map(|r| r.peak_counts).collect::<Vec<_>>()),
    };
    if !(reference > 0.0) {
        return Err(Error::domain("reference intensity must be > 0"));
    }
    Ok(results
        .iter()
        .filter(|r| r.peak_counts >= 0.5 * reference && r.peak_counts <= 1.5 * reference)
        .cloned()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Emitter;
    use crate::foundation::{Point3D, RandomSeed};
    use crate::imaging::{render_confocal, ImageGeometry, PsfSpec};

    fn emitter(x: f64, y: f64) -> Emitter {
        Emitter {
            position: Point3D::new(x, y, 50.0),
            zpl_center_ghz: 406_776.0,
            homogeneous_fwhm_mhz: 200.0,
            brightness_kcps: 30.0,
        }
    }

    fn psf() -> PsfSpec {
        PsfSpec::new(1.3, 737.0).unwrap()
    }

    #[test]
    fn empty_image() {
        let g = ImageGeometry::centered(Point2D::ORIGIN, 50.0, 40, 1.0);
        let img = render_confocal(&[], &psf(), 1.0, &g, &RandomSeed::new(1)).unwrap();
        let l = localize_sites(&img, &LocalizeOptions::default()).unwrap();
        assert!(l.sites.is_empty());
    }

    #[test]
    fn single_emitter_precision() {
        let g = ImageGeometry::centered(Point2D::ORIGIN, 50.0, 30, 1.0);
        let truth = Point2D::new(13.0, -21.0);
        let mut sq = Point2D::ORIGIN;
        let n = 40;
        for i in 0..n {
            let img = render_confocal(&[emitter(truth.x, truth.y)], &psf(), 0.5, &g, &RandomSeed::new(100 + i))
                .unwrap();
            let l = localize_sites(&img, &LocalizeOptions::default()).unwrap();
            assert_eq!(l.sites.len(), 1, "run {i}");
            let d = l.sites[0].position - truth;
            sq = sq + Point2D::new(d.x * d.x, d.y * d.y);
        }
        let (sx, sy) = ((sq.x / n as f64).sqrt(), (sq.y / n as f64).sqrt());
        assert!(sx <= 15.0 && sy <= 15.0, "{sx} {sy}");
    }

    #[test]
    fn two_separated_emitters() {
        let s = psf().gaussian_sigma_nm();
        let g = ImageGeometry::centered(Point2D::ORIGIN, 50.0, 40, 1.0);
        let em = [emitter(-2.5 * s, 0.0), emitter(2.5 * s, 0.0)];
        let img = render_confocal(&em, &psf(), 0.5, &g, &RandomSeed::new(9)).unwrap();
        let opts = LocalizeOptions {
            min_separation_nm: 2.0 * s,
            ..Default::default()
        };
        let l = localize_sites(&img, &opts).unwrap();
        assert_eq!(l.sites.len(), 2);
    }

    #[test]
    fn filter_window() {
        let site = |peak| LocalizationResult {
            position: Point2D::ORIGIN,
            err_x_nm: 1.0,
            err_y_nm: 1.0,
            peak_counts: peak,
            width_sigma_nm: 120.0,
            background_counts: 0.0,
            residual_norm: 0.0,
        };
        let all = vec![site(30.0); 5];
        assert_eq!(filter_single_sites(&all, Some(30.0)).unwrap().len(), 5);
        let mut mixed = vec![site(30.0); 5];
        mixed.push(site(60.0));
        assert_eq!(filter_single_sites(&mixed, None).unwrap().len(), 5);
        assert!(filter_single_sites(&mixed, Some(0.0)).is_err());
    }
}
