use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use super::protocol::throughput_estimate;
use super::report::{csv_string, opt, CampaignReport, FitRow, Outcome, WallModel};
use crate::activation::{apply_irradiation, sample_emitters, Emitter};
use crate::analysis::{estimate_yield, YieldEstimate};
use crate::error::{Error, Result};
use crate::foundation::{Point2D, Point3D, RandomSeed};
use crate::imaging::{expected_confocal, render_confocal, ImageGeometry};
use crate::implantation::{dose_to_ions, plan_pulse, sample_area_exposure};
use crate::par;

/// PSF σ of field kept around an exposed region so its light is collected.
const COLLECTION_SIGMAS: f64 = 8.0;
/// Pixels beyond this many PSF σ from the region form the background frame.
const FRAME_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub energy_kev: f64,
    pub dose_per_cm2: f64,
    /// Surface value (after irradiation) used to activate the ions.
    pub eta_true: f64,
    pub eta_extrapolated: bool,
    /// Ions that the dose delivers to the full region.
    pub n_ions_nominal: u64,
    /// Ions simulated; the exposed square shrinks to keep the dose.
    pub n_ions: u64,
    pub side_nm: f64,
    pub emitters: Vec<Emitter>,
    /// Background-subtracted integrated rate of the region, kcts/s.
    pub region_rate_kcps: f64,
    /// Integrated rate of one emitter, kcts/s.
    pub single_rate_kcps: f64,
    pub estimate: Option<YieldEstimate>,
    pub error: Option<String>,
}

impl SweepCell {
    /// Emitters per simulated ion.
    pub fn eta_realized(&self) -> f64 {
        if self.n_ions == 0 {
            0.0
        } else {
            self.emitters.len() as f64 / self.n_ions as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub failed_cells: usize,
    /// Adjacent cell pairs whose estimates follow the expected trend
    /// (non-decreasing in energy, non-increasing in dose).
    pub monotone_pairs: usize,
    pub compared_pairs: usize,
    /// Mean of estimate / surface value over cells with η > 0.
    pub mean_relative_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub energies_kev: Vec<f64>,
    pub doses_per_cm2: Vec<f64>,
    /// Energy-major: cell (i, j) is at `i * doses.len() + j`.
    pub cells: Vec<SweepCell>,
    pub summary: SweepSummary,
}

impl SweepOutcome {
    pub fn cell(&self, i: usize, j: usize) -> &SweepCell {
        &self.cells[i * self.doses_per_cm2.len() + j]
    }

    pub fn recompute_summary(&self) -> SweepSummary {
        let (ne, nd) = (self.energies_kev.len(), self.doses_per_cm2.len());
        let est = |i: usize, j: usize| self.cell(i, j).estimate.map(|e| e.eta);
        let (mut good, mut total) = (0, 0);
        for i in 0..ne {
            for j in 0..nd {
                let pairs = [(i + 1 < ne).then(|| (est(i, j), est(i + 1, j))), (j + 1 < nd).then(|| (est(i, j + 1), est(i, j)))];
                for (lo, hi) in pairs.into_iter().flatten() {
                    if let (Some(lo), Some(hi)) = (lo, hi) {
                        total += 1;
                        if hi >= lo {
                            good += 1;
                        }
                    }
                }
            }
        }
        let rel: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.eta_true > 0.0)
            .filter_map(|c| c.estimate.map(|e| e.eta / c.eta_true))
            .collect();
        SweepSummary {
            cells: self.cells.len(),
            failed_cells: self.cells.iter().filter(|c| c.estimate.is_none()).count(),
            monotone_pairs: good,
            compared_pairs: total,
            mean_relative_estimate: (!rel.is_empty()).then(|| rel.iter().sum::<f64>() / rel.len() as f64),
        }
    }

    pub fn monotone_fraction(&self) -> Option<f64> {
        let s = &self.summary;
        (s.compared_pairs > 0).then(|| s.monotone_pairs as f64 / s.compared_pairs as f64)
    }

    pub fn fits(&self) -> Vec<FitRow> {
        let mut v = vec![FitRow::new("failed_cells", self.summary.failed_cells as f64, None, "cells")];
        if let Some(f) = self.monotone_fraction() {
            v.push(FitRow::new("monotone_pair_fraction", f, None, "1"));
        }
        if let Some(r) = self.summary.mean_relative_estimate {
            v.push(FitRow::new("mean_relative_estimate", r, None, "1"));
        }
        v
    }

    pub fn sweep_csv(&self) -> Result<String> {
        let header = [
            "energy_kev", "dose_per_cm2", "eta_true", "eta_est", "eta_err", "eta_realized", "n_ions", "n_ions_nominal",
            "n_emitters",
        ];
        csv_string(&header, |w| {
            for c in &self.cells {
                w.write_record([
                    c.energy_kev.to_string(),
                    c.dose_per_cm2.to_string(),
                    c.eta_true.to_string(),
                    opt(c.estimate.map(|e| e.eta)),
                    opt(c.estimate.map(|e| e.eta_err)),
                    c.eta_realized().to_string(),
                    c.n_ions.to_string(),
                    c.n_ions_nominal.to_string(),
                    c.emitters.len().to_string(),
                ])?;
            }
            Ok(())
        })
    }
}

fn run_cell(cfg: &CampaignConfig, energy: f64, dose: f64, seed: &RandomSeed) -> Result<SweepCell> {
    let surface = cfg.yield_surface()?;
    let table = cfg.straggle_table()?;
    let lookup = surface.lookup(energy, dose)?;
    let eta = apply_irradiation(lookup.eta, cfg.irradiation.fluence_per_cm2, &surface);
    let side = cfg.sweep.region_side_nm;
    let nominal = dose_to_ions(dose, side * side * 1e-6)?.round() as u64;
    let n = nominal.min(cfg.sweep.max_ions_per_cell);
    if n == 0 {
        return Err(Error::domain("dose delivers no ions to the region"));
    }
    let side_sim = side * (n as f64 / nominal as f64).sqrt();
    let mut beam = cfg.beam.clone();
    beam.energy_kev = energy;
    let ions = sample_area_exposure(Point2D::ORIGIN, side_sim, n, energy, &beam, &table, &seed.stream("ions"))?;
    let emitters = sample_emitters(&ions, eta, &cfg.population, &seed.stream("activation"))?;

    let im = &cfg.imaging;
    let psf = im.psf()?;
    let sigma = psf.gaussian_sigma_nm();
    let reach = side_sim / 2.0 + COLLECTION_SIGMAS * sigma;
    let geometry = ImageGeometry::covering(
        Point2D::new(-reach, -reach),
        Point2D::new(reach, reach),
        im.pixel_pitch_nm,
        im.dwell_ms,
    );
    let image = render_confocal(&emitters, &psf, im.background_kcps, &geometry, &seed.stream("image"))?;
    let frame = side_sim / 2.0 + FRAME_SIGMAS * sigma;
    let (mut bg_sum, mut bg_n) = (0.0, 0usize);
    for r in 0..geometry.height {
        for c in 0..geometry.width {
            let p = geometry.pixel_center(r, c);
            if p.x.abs() > frame || p.y.abs() > frame {
                bg_sum += image.get(r, c) as f64;
                bg_n += 1;
            }
        }
    }
    let bg = if bg_n > 0 { bg_sum / bg_n as f64 } else { 0.0 };
    let total = image.total() as f64;
    let region_rate = ((total - bg * geometry.len() as f64) / geometry.dwell_ms).max(0.0);
    let probe = Emitter {
        position: Point3D::new(0.0, 0.0, 0.0),
        zpl_center_ghz: cfg.population.inhomogeneous_center_ghz,
        homogeneous_fwhm_mhz: cfg.population.lifetime_limit_mhz(),
        brightness_kcps: cfg.population.brightness_kcps,
    };
    let single_rate = expected_confocal(&[probe], &psf, 0.0, &geometry)?.iter().sum::<f64>() / geometry.dwell_ms;
    let estimate = estimate_yield(region_rate, single_rate, n as f64)?;
    Ok(SweepCell {
        energy_kev: energy,
        dose_per_cm2: dose,
        eta_true: eta,
        eta_extrapolated: lookup.extrapolated,
        n_ions_nominal: nominal,
        n_ions: n,
        side_nm: side_sim,
        emitters,
        region_rate_kcps: region_rate,
        single_rate_kcps: single_rate,
        estimate: Some(estimate),
        error: None,
    })
}

/// Yield map over an energy × dose grid. Each cell exposes a uniform square,
/// images it and converts the integrated intensity to a yield estimate with
/// the single-emitter rate. Failing cells are recorded, not fatal.
pub fn run_sweep_campaign(energies_kev: &[f64], doses_per_cm2: &[f64], config: &CampaignConfig, seed: u64) -> Result<CampaignReport> {
    if energies_kev.is_empty() || doses_per_cm2.is_empty() {
        return Err(Error::domain("sweep needs at least one energy and one dose"));
    }
    let mut cfg = config.resolved(None)?;
    cfg.seed = seed;
    cfg.sweep.energies_kev = energies_kev.to_vec();
    cfg.sweep.doses_per_cm2 = doses_per_cm2.to_vec();
    let root = RandomSeed::new(seed).stream("sweep");
    let nd = doses_per_cm2.len();
    let cells = par::map_indexed(energies_kev.len() * nd, |k| {
        let (e, d) = (energies_kev[k / nd], doses_per_cm2[k % nd]);
        run_cell(&cfg, e, d, &root.child(k as u64)).unwrap_or_else(|err| SweepCell {
            energy_kev: e,
            dose_per_cm2: d,
            eta_true: 0.0,
            eta_extrapolated: false,
            n_ions_nominal: 0,
            n_ions: 0,
            side_nm: 0.0,
            emitters: Vec::new(),
            region_rate_kcps: 0.0,
            single_rate_kcps: 0.0,
            estimate: None,
            error: Some(err.to_string()),
        })
    });
    let mut beam_on_s = 0.0;
    for c in &cells {
        beam_on_s += plan_pulse(cfg.beam.current_pa, c.n_ions_nominal)? * 1e-6;
    }
    let n_sites = cells.len() as u64;
    let wall = WallModel {
        n_sites,
        sites_per_s: cfg.throughput.sites_per_s,
        implant_s: throughput_estimate(n_sites, cfg.throughput.sites_per_s)?,
        beam_on_s,
    };
    let mut outcome = SweepOutcome {
        energies_kev: energies_kev.to_vec(),
        doses_per_cm2: doses_per_cm2.to_vec(),
        cells,
        summary: SweepSummary::default(),
    };
    outcome.summary = outcome.recompute_summary();
    CampaignReport::assemble(cfg, wall, Outcome::Sweep(outcome))
}
