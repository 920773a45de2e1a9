use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use super::protocol::throughput_estimate;
use super::report::{csv_string, opt, CampaignReport, FitRow, Outcome, SiteTruth, WallModel};
use crate::activation::{apply_irradiation, sample_emitters, Emitter};
use crate::analysis::{
    filter_single_sites, fit_affine_grid, fit_rayleigh, localize_sites, GridFit, GridOptions,
    LocalizationResult, RayleighFit,
};
use crate::error::{Error, Result};
use crate::foundation::{Point2D, RandomSeed};
use crate::imaging::{render_confocal, ImageGeometry};
use crate::implantation::{expected_lateral_sigma, plan_pulse, sample_ion_positions, ImplantShot};
use crate::par;

/// One array site: ground truth plus what the analysis made of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub row: usize,
    pub col: usize,
    pub truth: SiteTruth,
    pub fit: Option<LocalizationResult>,
    /// Passed the single-emitter intensity filter.
    pub single: bool,
    pub grid_index: Option<(i64, i64)>,
    /// Fitted position minus its registered lattice point.
    pub displacement: Option<Point2D>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArraySummary {
    pub n_sites: usize,
    pub n_ions: u64,
    pub n_emitters: usize,
    pub occupied_sites: usize,
    /// Sites holding exactly one emitter.
    pub single_emitter_sites: usize,
    pub localized_sites: usize,
    pub single_sites: usize,
    /// Occupied sites without a localization.
    pub failed_sites: usize,
    /// Per-axis std of true single-emitter positions about their targets.
    pub truth_std_nm: Option<Point2D>,
    pub recovered_std_nm: Option<Point2D>,
    /// Per-axis RMS localization uncertainty of the single sites.
    pub localization_rms_nm: Option<Point2D>,
    /// Recovered std with the affine fit's degrees of freedom restored and
    /// the localization uncertainty removed in quadrature.
    pub corrected_std_nm: Option<Point2D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayOutcome {
    pub eta: f64,
    pub eta_extrapolated: bool,
    /// Beam and straggle σ in quadrature.
    pub expected_sigma_nm: f64,
    pub image_geometry: ImageGeometry,
    pub candidates: usize,
    pub dropped_fits: usize,
    /// Localizations not attributable to any site.
    pub stray_localizations: usize,
    pub sites: Vec<SiteRecord>,
    pub grid: Option<GridFit>,
    pub grid_error: Option<String>,
    pub rayleigh: Option<RayleighFit>,
    pub rayleigh_error: Option<String>,
    pub summary: ArraySummary,
}

fn axis_std(v: &[Point2D]) -> Option<Point2D> {
    if v.len() < 2 {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().fold(Point2D::ORIGIN, |a, &b| a + b) * (1.0 / n);
    let (sx, sy) = v.iter().fold((0.0, 0.0), |(sx, sy), p| {
        (sx + (p.x - m.x).powi(2), sy + (p.y - m.y).powi(2))
    });
    Some(Point2D::new((sx / (n - 1.0)).sqrt(), (sy / (n - 1.0)).sqrt()))
}

impl ArrayOutcome {
    pub fn recompute_summary(&self) -> ArraySummary {
        let s = &self.sites;
        let truth_offsets: Vec<Point2D> = s
            .iter()
            .filter(|r| r.truth.emitters.len() == 1)
            .map(|r| r.truth.emitters[0].position.lateral() - r.truth.target)
            .collect();
        let singles: Vec<&LocalizationResult> = s.iter().filter(|r| r.single).filter_map(|r| r.fit.as_ref()).collect();
        let ns = singles.len() as f64;
        let loc_rms = (!singles.is_empty()).then(|| {
            Point2D::new(
                (singles.iter().map(|f| f.err_x_nm * f.err_x_nm).sum::<f64>() / ns).sqrt(),
                (singles.iter().map(|f| f.err_y_nm * f.err_y_nm).sum::<f64>() / ns).sqrt(),
            )
        });
        let recovered = self.grid.as_ref().map(|g| g.std_displacement);
        let corrected = match (recovered, loc_rms, self.grid.as_ref()) {
            (Some(r), Some(l), Some(g)) if g.displacements.len() > 3 => {
                let n = g.displacements.len() as f64;
                let k = (n - 1.0) / (n - 3.0);
                Some(Point2D::new(
                    (r.x * r.x * k - l.x * l.x).max(0.0).sqrt(),
                    (r.y * r.y * k - l.y * l.y).max(0.0).sqrt(),
                ))
            }
            _ => None,
        };
        ArraySummary {
            n_sites: s.len(),
            n_ions: s.iter().map(|r| r.truth.n_ions).sum(),
            n_emitters: s.iter().map(|r| r.truth.emitters.len()).sum(),
            occupied_sites: s.iter().filter(|r| !r.truth.emitters.is_empty()).count(),
            single_emitter_sites: truth_offsets.len(),
            localized_sites: s.iter().filter(|r| r.fit.is_some()).count(),
            single_sites: singles.len(),
            failed_sites: s.iter().filter(|r| !r.truth.emitters.is_empty() && r.fit.is_none()).count(),
            truth_std_nm: axis_std(&truth_offsets),
            recovered_std_nm: recovered,
            localization_rms_nm: loc_rms,
            corrected_std_nm: corrected,
        }
    }

    pub fn fits(&self) -> Vec<FitRow> {
        let s = &self.summary;
        let mut v = vec![
            FitRow::new("eta", self.eta, None, "1"),
            FitRow::new("expected_sigma", self.expected_sigma_nm, None, "nm"),
            FitRow::new("single_sites", s.single_sites as f64, None, "sites"),
            FitRow::new("failed_sites", s.failed_sites as f64, None, "sites"),
        ];
        let mut xy = |name: &str, p: Option<Point2D>| {
            if let Some(p) = p {
                v.push(FitRow::new(&format!("{name}_x"), p.x, None, "nm"));
                v.push(FitRow::new(&format!("{name}_y"), p.y, None, "nm"));
            }
        };
        xy("truth_std", s.truth_std_nm);
        xy("displacement_std", s.recovered_std_nm);
        xy("localization_rms", s.localization_rms_nm);
        xy("corrected_std", s.corrected_std_nm);
        if let Some(r) = &self.rayleigh {
            v.push(FitRow::new("rayleigh_sigma", r.sigma_hat_nm, Some(r.sigma_err_nm), "nm"));
            v.push(FitRow::new("rayleigh_mean_r", r.mean_r_nm, None, "nm"));
            v.push(FitRow::new("rayleigh_std_r", r.std_r_nm, None, "nm"));
        }
        v
    }

    pub fn sites_csv(&self) -> Result<String> {
        let header = [
            "row", "col", "target_x_nm", "target_y_nm", "n_ions", "n_emitters", "x_nm", "y_nm",
            "err_x_nm", "err_y_nm", "peak_counts", "single", "grid_i", "grid_j", "dx_nm", "dy_nm", "r_nm",
        ];
        csv_string(&header, |w| {
            for r in &self.sites {
                let f = r.fit.as_ref();
                let d = r.displacement;
                w.write_record([
                    r.row.to_string(),
                    r.col.to_string(),
                    r.truth.target.x.to_string(),
                    r.truth.target.y.to_string(),
                    r.truth.n_ions.to_string(),
                    r.truth.emitters.len().to_string(),
                    opt(f.map(|f| f.position.x)),
                    opt(f.map(|f| f.position.y)),
                    opt(f.map(|f| f.err_x_nm)),
                    opt(f.map(|f| f.err_y_nm)),
                    opt(f.map(|f| f.peak_counts)),
                    r.single.to_string(),
                    r.grid_index.map(|g| g.0.to_string()).unwrap_or_default(),
                    r.grid_index.map(|g| g.1.to_string()).unwrap_or_default(),
                    opt(d.map(|d| d.x)),
                    opt(d.map(|d| d.y)),
                    opt(d.map(|d| d.norm())),
                ])?;
            }
            Ok(())
        })
    }
}

/// Square-array precision campaign: single-point exposures on a lattice,
/// confocal image, localization, single-site filter, affine grid
/// registration and Rayleigh statistics of the residual distances.
pub fn run_array_campaign(config: &CampaignConfig, seed: u64) -> Result<CampaignReport> {
    let mut cfg = config.resolved(None)?;
    cfg.seed = seed;
    let plan = cfg.array;
    if plan.rows == 0 || plan.columns == 0 {
        return Err(Error::domain("array needs at least one row and one column"));
    }
    let table = cfg.straggle_table()?;
    let surface = cfg.yield_surface()?;
    let lookup = surface.lookup(cfg.beam.energy_kev, plan.dose_per_cm2)?;
    let eta = apply_irradiation(lookup.eta, cfg.irradiation.fluence_per_cm2, &surface);
    let straggle = table.lookup(cfg.beam.energy_kev)?;
    let expected_sigma = expected_lateral_sigma(&cfg.beam, straggle.lateral_sigma_nm);
    let root = RandomSeed::new(seed).stream("array");

    let n_sites = plan.rows * plan.columns;
    let truths: Vec<SiteTruth> = par::map_indexed(n_sites, |k| -> Result<SiteTruth> {
        let target = Point2D::new((k % plan.columns) as f64 * plan.pitch_nm, (k / plan.columns) as f64 * plan.pitch_nm);
        let shot = ImplantShot {
            target,
            requested_ions: plan.ions_per_site,
            energy_kev: cfg.beam.energy_kev,
        };
        let s = root.child(k as u64);
        let ions = sample_ion_positions(&shot, &cfg.beam, &table, &s.stream("ions"))?;
        let emitters = sample_emitters(&ions, eta, &cfg.population, &s.stream("activation"))?;
        Ok(SiteTruth {
            target,
            n_ions: plan.ions_per_site,
            ions,
            emitters,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let im = &cfg.imaging;
    let far = Point2D::new((plan.columns - 1) as f64 * plan.pitch_nm, (plan.rows - 1) as f64 * plan.pitch_nm);
    let m = Point2D::new(im.margin_nm, im.margin_nm);
    let geometry = ImageGeometry::covering(Point2D::ORIGIN - m, far + m, im.pixel_pitch_nm, im.dwell_ms);
    let all: Vec<Emitter> = truths.iter().flat_map(|t| t.emitters.iter().cloned()).collect();
    let image = render_confocal(&all, &im.psf()?, im.background_kcps, &geometry, &root.stream("image"))?;
    let locs = localize_sites(&image, &im.localize)?;

    // Attribute each localization to the nearest lattice site.
    let mut fits: Vec<Option<LocalizationResult>> = vec![None; n_sites];
    let mut stray = 0;
    for l in &locs.sites {
        let c = (l.position.x / plan.pitch_nm).round();
        let r = (l.position.y / plan.pitch_nm).round();
        let inside = c >= 0.0 && r >= 0.0 && (c as usize) < plan.columns && (r as usize) < plan.rows;
        if !inside || l.position.distance(Point2D::new(c * plan.pitch_nm, r * plan.pitch_nm)) > plan.pitch_nm / 2.0 {
            stray += 1;
            continue;
        }
        let k = r as usize * plan.columns + c as usize;
        match &fits[k] {
            Some(prev) if prev.peak_counts >= l.peak_counts => stray += 1,
            Some(_) => {
                stray += 1;
                fits[k] = Some(l.clone());
            }
            None => fits[k] = Some(l.clone()),
        }
    }
    let located: Vec<LocalizationResult> = fits.iter().flatten().cloned().collect();
    let kept = filter_single_sites(&located, im.single_reference_counts)?;
    let single: Vec<bool> = fits
        .iter()
        .map(|f| f.as_ref().is_some_and(|f| kept.contains(f)))
        .collect();
    let single_idx: Vec<usize> = (0..n_sites).filter(|&k| single[k]).collect();
    let positions: Vec<Point2D> = single_idx.iter().map(|&k| fits[k].as_ref().unwrap().position).collect();

    let (grid, grid_error) = if positions.is_empty() {
        (None, Some("no single-emitter sites".to_string()))
    } else {
        match fit_affine_grid(&positions, plan.pitch_nm, &GridOptions::default()) {
            Ok(g) => (Some(g), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let (rayleigh, rayleigh_error) = match &grid {
        Some(g) => match fit_rayleigh(&g.distances()) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        },
        None => (None, None),
    };

    let mut sites: Vec<SiteRecord> = truths
        .into_iter()
        .zip(fits)
        .enumerate()
        .map(|(k, (truth, fit))| SiteRecord {
            row: k / plan.columns,
            col: k % plan.columns,
            truth,
            fit,
            single: single[k],
            grid_index: None,
            displacement: None,
        })
        .collect();
    if let Some(g) = &grid {
        for (j, &k) in single_idx.iter().enumerate() {
            sites[k].grid_index = Some(g.indices[j]);
            sites[k].displacement = Some(g.displacements[j]);
        }
    }

    let beam_on_s = n_sites as f64 * plan_pulse(cfg.beam.current_pa, plan.ions_per_site)? * 1e-6;
    let wall = WallModel {
        n_sites: n_sites as u64,
        sites_per_s: cfg.throughput.sites_per_s,
        implant_s: throughput_estimate(n_sites as u64, cfg.throughput.sites_per_s)?,
        beam_on_s,
    };
    let mut outcome = ArrayOutcome {
        eta,
        eta_extrapolated: lookup.extrapolated,
        expected_sigma_nm: expected_sigma,
        image_geometry: geometry,
        candidates: locs.candidates,
        dropped_fits: locs.dropped,
        stray_localizations: stray,
        sites,
        grid,
        grid_error,
        rayleigh,
        rayleigh_error,
        summary: ArraySummary::default(),
    };
    outcome.summary = outcome.recompute_summary();
    let max_ions = cfg.max_stored_ions;
    let mut report = CampaignReport::assemble(cfg, wall, Outcome::Array(outcome))?;
    report.thin_ions(max_ions);
    Ok(report)
}
