use serde::{Deserialize, Serialize};

use super::localize::{fit_gaussian_2d, median_of, smooth};
use crate::error::{Error, Result};
use crate::foundation::Point2D;
use crate::imaging::{ConfocalImage, SpectralCube};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetingOptions {
    /// Full width of the band summed around the Raman line.
    pub raman_band_nm: f64,
    /// Full width of the band summed around the ZPL.
    pub zpl_band_nm: f64,
    /// Starting width for both spot fits; defaults to the cube's PSF σ.
    pub sigma_guess_nm: Option<f64>,
    /// ZPL detection threshold in background-noise units.
    pub threshold_sigmas: f64,
}

impl Default for TargetingOptions {
    fn default() -> Self {
        TargetingOptions {
            raman_band_nm: 2.0,
            zpl_band_nm: 10.0,
            sigma_guess_nm: None,
            threshold_sigmas: 5.0,
        }
    }
}

/// A centroid with its 1σ covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub position: Point2D,
    pub var_x_nm2: f64,
    pub var_y_nm2: f64,
    pub cov_xy_nm2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetingResult {
    pub raman: Centroid,
    pub zpl: Centroid,
    /// ZPL centroid minus Raman centroid.
    pub offset: Point2D,
    pub distance_nm: f64,
    /// 68% (1σ) uncertainty of the distance.
    pub distance_err_nm: f64,
}

fn fit_spot(image: &ConfocalImage, sigma: f64, detect: Option<f64>) -> Result<Centroid> {
    let g = &image.geometry;
    let raw = image.as_f64();
    let s = smooth(&raw, g.width, g.height, (sigma / g.pixel_pitch_nm).max(0.5));
    let bg = median_of(&raw);
    let (imax, &smax) = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::NoSite("empty image".into()))?;
    if let Some(k) = detect {
        let sigma_px = sigma / g.pixel_pitch_nm;
        let noise = (bg.max(1.0) / (4.0 * std::f64::consts::PI * sigma_px * sigma_px)).sqrt();
        if smax <= bg + k * noise {
            return Err(Error::NoSite(format!(
                "no emitter above background (peak {smax:.2}, background {bg:.2})"
            )));
        }
    }
    let start = g.pixel_center(imax / g.width, imax % g.width);
    let pixels: Vec<(f64, f64, f64)> = (0..g.len())
        .map(|i| {
            let p = g.pixel_center(i / g.width, i % g.width);
            (p.x, p.y, raw[i])
        })
        .collect();
    let fit = fit_gaussian_2d(&pixels, [start.x, start.y, (smax - bg).max(0.5), sigma, bg])?;
    let c = &fit.covariance;
    Ok(Centroid {
        position: Point2D::new(fit.params[0], fit.params[1]),
        var_x_nm2: c[(0, 0)],
        var_y_nm2: c[(1, 1)],
        cov_xy_nm2: c[(0, 1)],
    })
}

/// Locates the cavity from the Raman slice and the emitter from the ZPL slice
/// and reports their separation.
pub fn estimate_targeting(
    cube: &SpectralCube,
    raman_nm: f64,
    zpl_nm: f64,
    opts: &TargetingOptions,
) -> Result<TargetingResult> {
    for (name, w) in [("Raman", raman_nm), ("ZPL", zpl_nm)] {
        if !cube.axis.contains(w) {
            return Err(Error::domain(format!(
                "{name} wavelength {w} nm lies outside the cube's axis"
            )));
        }
    }
    let sigma = opts
        .sigma_guess_nm
        .or(cube.metadata.psf_sigma_nm)
        .unwrap_or(120.0);
    let raman = cube.slice_band(raman_nm - opts.raman_band_nm / 2.0, raman_nm + opts.raman_band_nm / 2.0)?;
    let zpl = cube.slice_band(zpl_nm - opts.zpl_band_nm / 2.0, zpl_nm + opts.zpl_band_nm / 2.0)?;
    let rc = fit_spot(&raman, sigma, None)?;
    let zc = fit_spot(&zpl, sigma, Some(opts.threshold_sigmas))?;
    let offset = zc.position - rc.position;
    let d = offset.norm();
    let (vx, vy, cxy) = (
        rc.var_x_nm2 + zc.var_x_nm2,
        rc.var_y_nm2 + zc.var_y_nm2,
        rc.cov_xy_nm2 + zc.cov_xy_nm2,
    );
    let var_d = if d > 0.0 {
        (offset.x * offset.x * vx + offset.y * offset.y * vy + 2.0 * offset.x * offset.y * cxy) / (d * d)
    } else {
        0.5 * (vx + vy)
    };
    Ok(TargetingResult {
        raman: rc,
        zpl: zc,
        offset,
        distance_nm: d,
        distance_err_nm: var_d.max(0.0).sqrt(),
    })
}
