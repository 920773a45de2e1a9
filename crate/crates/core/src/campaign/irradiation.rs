use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use super::protocol::throughput_estimate;
use super::report::{csv_string, CampaignReport, FitRow, Outcome, SiteTruth, WallModel};
use crate::activation::{apply_irradiation, sample_emitters, Emitter};
use crate::error::{Error, Result};
use crate::foundation::{Point2D, RandomSeed};
use crate::imaging::{expected_confocal, render_confocal, ConfocalImage, ImageGeometry};
use crate::implantation::{plan_pulse, sample_ion_positions, ImplantShot};
use crate::par;

/// Half-width, in PSF σ, of the square summed around each spot.
const SPOT_WINDOW_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRecord {
    /// Truth before irradiation. The emitters after irradiation are a
    /// superset, stored in `emitters_after`.
    pub truth: SiteTruth,
    pub emitters_after: Vec<Emitter>,
    /// Expected background-free intensity of the spot given its ions, counts.
    pub expected_before: f64,
    pub expected_after: f64,
    /// Measured background-subtracted intensity, counts.
    pub observed_before: f64,
    pub observed_after: f64,
    /// Poisson error of the observed ratio.
    pub observed_ratio_err: f64,
    /// Brightest pixel of the "before" line profile near the spot, counts.
    pub profile_peak_before: u64,
}

impl SpotRecord {
    pub fn expected_ratio(&self) -> f64 {
        self.expected_after / self.expected_before
    }

    pub fn observed_ratio(&self) -> f64 {
        self.observed_after / self.observed_before
    }
}

/// Horizontal cut through the spot maxima.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LineProfile {
    pub y_nm: f64,
    pub x_nm: Vec<f64>,
    pub before_counts: Vec<u64>,
    pub after_counts: Vec<u64>,
    pub before_expected: Vec<f64>,
    pub after_expected: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IrradiationSummary {
    pub min_expected_ratio: f64,
    pub max_expected_ratio: f64,
    pub mean_observed_ratio: f64,
    /// Ranking of the "before" profile peaks equals the ranking of ion numbers.
    pub peak_order_matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrradiationOutcome {
    pub eta_before: f64,
    pub eta_after: f64,
    pub fluence_per_cm2: f64,
    pub spots: Vec<SpotRecord>,
    pub profile: LineProfile,
    pub summary: IrradiationSummary,
}

fn ranks_match(a: &[u64], b: &[u64]) -> bool {
    let order = |v: &[u64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by_key(|&i| (v[i], i));
        idx
    };
    order(a) == order(b)
}

impl IrradiationOutcome {
    pub fn recompute_summary(&self) -> IrradiationSummary {
        let exp: Vec<f64> = self.spots.iter().map(|s| s.expected_ratio()).collect();
        let obs: Vec<f64> = self.spots.iter().map(|s| s.observed_ratio()).collect();
        let ions: Vec<u64> = self.spots.iter().map(|s| s.truth.n_ions).collect();
        let peaks: Vec<u64> = self.spots.iter().map(|s| s.profile_peak_before).collect();
        IrradiationSummary {
            min_expected_ratio: exp.iter().cloned().fold(f64::INFINITY, f64::min),
            max_expected_ratio: exp.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean_observed_ratio: obs.iter().sum::<f64>() / obs.len().max(1) as f64,
            peak_order_matches: ranks_match(&ions, &peaks),
        }
    }

    pub fn fits(&self) -> Vec<FitRow> {
        let mut v = vec![
            FitRow::new("eta_before", self.eta_before, None, "1"),
            FitRow::new("eta_after", self.eta_after, None, "1"),
        ];
        for s in &self.spots {
            let n = s.truth.n_ions;
            v.push(FitRow::new(&format!("expected_ratio_{n}_ions"), s.expected_ratio(), None, "1"));
            v.push(FitRow::new(&format!("observed_ratio_{n}_ions"), s.observed_ratio(), Some(s.observed_ratio_err), "1"));
        }
        v
    }

    pub fn sites_csv(&self) -> Result<String> {
        let header = [
            "spot", "target_x_nm", "target_y_nm", "n_ions", "emitters_before", "emitters_after", "expected_before",
            "expected_after", "expected_ratio", "observed_before", "observed_after", "observed_ratio", "observed_ratio_err",
        ];
        csv_string(&header, |w| {
            for (k, s) in self.spots.iter().enumerate() {
                w.write_record([
                    k.to_string(),
                    s.truth.target.x.to_string(),
                    s.truth.target.y.to_string(),
                    s.truth.n_ions.to_string(),
                    s.truth.emitters.len().to_string(),
                    s.emitters_after.len().to_string(),
                    s.expected_before.to_string(),
                    s.expected_after.to_string(),
                    s.expected_ratio().to_string(),
                    s.observed_before.to_string(),
                    s.observed_after.to_string(),
                    s.observed_ratio().to_string(),
                    s.observed_ratio_err.to_string(),
                ])?;
            }
            Ok(())
        })
    }

    pub fn profile_csv(&self) -> Result<String> {
        let p = &self.profile;
        csv_string(&["x_nm", "before_counts", "after_counts", "before_expected", "after_expected"], |w| {
            for i in 0..p.x_nm.len() {
                w.write_record([
                    p.x_nm[i].to_string(),
                    p.before_counts[i].to_string(),
                    p.after_counts[i].to_string(),
                    p.before_expected[i].to_string(),
                    p.after_expected[i].to_string(),
                ])?;
            }
            Ok(())
        })
    }
}

fn median(v: &[u64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    }
}

/// Pixels of the square window around `p`.
fn window(g: &ImageGeometry, p: Point2D, half: f64) -> Vec<usize> {
    (0..g.len())
        .filter(|&i| {
            let c = g.pixel_center(i / g.width, i % g.width);
            (c.x - p.x).abs() <= half && (c.y - p.y).abs() <= half
        })
        .collect()
}

fn observed(image: &ConfocalImage, pix: &[usize], bg: f64) -> (f64, f64) {
    let raw: f64 = pix.iter().map(|&i| image.counts[i] as f64).sum();
    (raw - bg * pix.len() as f64, raw)
}

/// Before/after electron-irradiation comparison of spots with different ion
/// numbers. The same ions are activated twice with coupled randomness, so
/// the emitters after irradiation contain those before.
pub fn run_irradiation_comparison(spot_ions: &[u64], config: &CampaignConfig, seed: u64) -> Result<CampaignReport> {
    if spot_ions.is_empty() {
        return Err(Error::domain("irradiation comparison needs at least one spot"));
    }
    let mut cfg = config.resolved(None)?;
    cfg.seed = seed;
    cfg.spots.ions_per_spot = spot_ions.to_vec();
    let plan = cfg.spots.clone();
    let table = cfg.straggle_table()?;
    let surface = cfg.yield_surface()?;
    let eta_before = surface.lookup(cfg.beam.energy_kev, plan.dose_per_cm2)?.eta;
    let fluence = if cfg.irradiation.fluence_per_cm2 > 0.0 {
        cfg.irradiation.fluence_per_cm2
    } else {
        plan.fluence_per_cm2
    };
    let eta_after = apply_irradiation(eta_before, fluence, &surface);
    if !(eta_before > 0.0) {
        return Err(Error::domain("irradiation comparison needs a non-zero yield before irradiation"));
    }
    let root = RandomSeed::new(seed).stream("irradiation");

    let shots: Vec<(SiteTruth, Vec<Emitter>)> = par::map_indexed(spot_ions.len(), |k| -> Result<_> {
        let target = Point2D::new(k as f64 * plan.spacing_nm, 0.0);
        let shot = ImplantShot {
            target,
            requested_ions: spot_ions[k],
            energy_kev: cfg.beam.energy_kev,
        };
        let s = root.child(k as u64);
        let ions = sample_ion_positions(&shot, &cfg.beam, &table, &s.stream("ions"))?;
        let before = sample_emitters(&ions, eta_before, &cfg.population, &s.stream("activation"))?;
        let after = sample_emitters(&ions, eta_after, &cfg.population, &s.stream("activation"))?;
        Ok((
            SiteTruth {
                target,
                n_ions: spot_ions[k],
                ions,
                emitters: before,
            },
            after,
        ))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let im = &cfg.imaging;
    let psf = im.psf()?;
    let sigma = psf.gaussian_sigma_nm();
    let m = im.margin_nm.max(4.0 * sigma);
    let last = (spot_ions.len() - 1) as f64 * plan.spacing_nm;
    let geometry = ImageGeometry::covering(Point2D::new(-m, -m), Point2D::new(last + m, m), im.pixel_pitch_nm, im.dwell_ms);

    // Expected image given the ions: every ion as an emitter of unit
    // brightness scaled by η.
    let as_emitters: Vec<Emitter> = shots
        .iter()
        .flat_map(|(t, _)| t.ions.iter())
        .map(|&position| Emitter {
            position,
            zpl_center_ghz: cfg.population.inhomogeneous_center_ghz,
            homogeneous_fwhm_mhz: cfg.population.lifetime_limit_mhz(),
            brightness_kcps: cfg.population.brightness_kcps,
        })
        .collect();
    let per_ion = expected_confocal(&as_emitters, &psf, 0.0, &geometry)?;
    let bg_counts = im.background_kcps * im.dwell_ms;
    let before_all: Vec<Emitter> = shots.iter().flat_map(|(t, _)| t.emitters.iter().cloned()).collect();
    let after_all: Vec<Emitter> = shots.iter().flat_map(|(_, a)| a.iter().cloned()).collect();
    let img_before = render_confocal(&before_all, &psf, im.background_kcps, &geometry, &root.stream("before"))?;
    let img_after = render_confocal(&after_all, &psf, im.background_kcps, &geometry, &root.stream("after"))?;
    let bg_b = median(&img_before.counts);
    let bg_a = median(&img_after.counts);

    let row = (-geometry.origin.y / geometry.pixel_pitch_nm).round().clamp(0.0, (geometry.height - 1) as f64) as usize;
    let cols = 0..geometry.width;
    let idx = |c: usize| row * geometry.width + c;
    let profile = LineProfile {
        y_nm: geometry.pixel_center(row, 0).y,
        x_nm: cols.clone().map(|c| geometry.pixel_center(row, c).x).collect(),
        before_counts: cols.clone().map(|c| img_before.counts[idx(c)]).collect(),
        after_counts: cols.clone().map(|c| img_after.counts[idx(c)]).collect(),
        before_expected: cols.clone().map(|c| bg_counts + eta_before * per_ion[idx(c)]).collect(),
        after_expected: cols.map(|c| bg_counts + eta_after * per_ion[idx(c)]).collect(),
    };

    let half = SPOT_WINDOW_SIGMAS * sigma;
    let spots: Vec<SpotRecord> = shots
        .into_iter()
        .map(|(truth, emitters_after)| {
            let pix = window(&geometry, truth.target, half);
            let base: f64 = pix.iter().map(|&i| per_ion[i]).sum();
            let (ob, rb) = observed(&img_before, &pix, bg_b);
            let (oa, ra) = observed(&img_after, &pix, bg_a);
            let ratio = oa / ob;
            let err = ratio.abs() * (ra / (oa * oa) + rb / (ob * ob)).sqrt();
            let peak = (0..geometry.width)
                .filter(|&c| (geometry.pixel_center(row, c).x - truth.target.x).abs() <= half)
                .map(|c| img_before.counts[idx(c)])
                .max()
                .unwrap_or(0);
            SpotRecord {
                truth,
                emitters_after,
                expected_before: eta_before * base,
                expected_after: eta_after * base,
                observed_before: ob,
                observed_after: oa,
                observed_ratio_err: if err.is_finite() { err } else { 0.0 },
                profile_peak_before: peak,
            }
        })
        .collect();

    let mut beam_on_s = 0.0;
    for &n in spot_ions {
        beam_on_s += plan_pulse(cfg.beam.current_pa, n)? * 1e-6;
    }
    let n_sites = spot_ions.len() as u64;
    let wall = WallModel {
        n_sites,
        sites_per_s: cfg.throughput.sites_per_s,
        implant_s: throughput_estimate(n_sites, cfg.throughput.sites_per_s)?,
        beam_on_s,
    };
    let mut outcome = IrradiationOutcome {
        eta_before,
        eta_after,
        fluence_per_cm2: fluence,
        spots,
        profile,
        summary: IrradiationSummary::default(),
    };
    outcome.summary = outcome.recompute_summary();
    let max_ions = cfg.max_stored_ions;
    let mut report = CampaignReport::assemble(cfg, wall, Outcome::Irradiation(outcome))?;
    report.thin_ions(max_ions);
    Ok(report)
}
