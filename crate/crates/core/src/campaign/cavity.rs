use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use super::protocol::throughput_estimate;
use super::report::{csv_string, opt, CampaignReport, FitRow, Outcome, SiteTruth, WallModel};
use crate::activation::sample_emitters;
use crate::analysis::{estimate_targeting, poisson_chi_square, ChiSquareTest, TargetingResult};
use crate::error::{Error, Result};
use crate::foundation::{Point2D, RandomSeed};
use crate::imaging::{render_spectral_cube, CavityLayout};
use crate::implantation::{plan_pulse, sample_ion_positions, ImplantShot};
use crate::par;

/// Position of one emitter relative to the mode maximum it was aimed at,
/// measured from the cube and known from the simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetingRecord {
    pub maximum: usize,
    pub result: TargetingResult,
    /// Measured emitter position minus the targeted maximum.
    pub offset_nm: Point2D,
    pub distance_nm: f64,
    pub distance_err_nm: f64,
    /// True emitter position minus the fabricated maximum.
    pub true_offset_nm: Point2D,
}

impl TargetingRecord {
    pub fn true_distance_nm(&self) -> f64 {
        self.true_offset_nm.norm()
    }

    pub fn covered(&self) -> bool {
        (self.distance_nm - self.true_distance_nm()).abs() <= self.distance_err_nm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityRecord {
    pub nominal_center: Point2D,
    /// Fabricated centre, including any placement error.
    pub actual_center: Point2D,
    /// One exposure per mode maximum.
    pub shots: Vec<SiteTruth>,
    pub targeting: Option<TargetingRecord>,
    pub targeting_error: Option<String>,
}

impl CavityRecord {
    pub fn emitter_count(&self) -> usize {
        self.shots.iter().map(|s| s.emitters.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetingSummary {
    pub n: usize,
    pub mean_distance_nm: f64,
    pub std_distance_nm: f64,
    pub mean_distance_err_nm: f64,
    pub mean_offset_nm: Point2D,
    /// Fraction whose true distance lies within the reported 1σ interval.
    pub coverage_68: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CavitySummary {
    pub cavities: usize,
    /// `emitter_histogram[k]` cavities hold k emitters.
    pub emitter_histogram: Vec<u64>,
    pub lambda_per_cavity: f64,
    pub chi_square: Option<ChiSquareTest>,
    pub zero_emitter_cavities: usize,
    pub single_emitter_cavities: usize,
    pub multi_emitter_cavities: usize,
    /// Single-emitter cavities beyond the cube budget.
    pub not_imaged: usize,
    pub targeting_failures: usize,
    pub targeting: Option<TargetingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityOutcome {
    pub eta: f64,
    pub eta_extrapolated: bool,
    pub energy_kev: f64,
    pub ions_per_maximum: u64,
    pub emission_nm: f64,
    pub cavities: Vec<CavityRecord>,
    pub summary: CavitySummary,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Summary of a set of targeting records.
pub fn summarize_targeting(records: &[TargetingRecord]) -> Option<TargetingSummary> {
    if records.is_empty() {
        return None;
    }
    let n = records.len();
    let d: Vec<f64> = records.iter().map(|r| r.distance_nm).collect();
    let m = mean(&d);
    let var = if n > 1 {
        d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let ox: Vec<f64> = records.iter().map(|r| r.offset_nm.x).collect();
    let oy: Vec<f64> = records.iter().map(|r| r.offset_nm.y).collect();
    let errs: Vec<f64> = records.iter().map(|r| r.distance_err_nm).collect();
    Some(TargetingSummary {
        n,
        mean_distance_nm: m,
        std_distance_nm: var.sqrt(),
        mean_distance_err_nm: mean(&errs),
        mean_offset_nm: Point2D::new(mean(&ox), mean(&oy)),
        coverage_68: records.iter().filter(|r| r.covered()).count() as f64 / n as f64,
    })
}

impl CavityOutcome {
    pub fn recompute_summary(&self) -> CavitySummary {
        let counts: Vec<usize> = self.cavities.iter().map(|c| c.emitter_count()).collect();
        let kmax = counts.iter().copied().max().unwrap_or(0);
        let mut hist = vec![0u64; kmax + 1];
        for &k in &counts {
            hist[k] += 1;
        }
        let maxima = self.cavities.first().map_or(0, |c| c.shots.len());
        let lambda = (self.ions_per_maximum * maxima as u64) as f64 * self.eta;
        let records: Vec<TargetingRecord> = self.cavities.iter().filter_map(|c| c.targeting).collect();
        let singles = counts.iter().filter(|&&k| k == 1).count();
        let failures = self.cavities.iter().filter(|c| c.targeting_error.is_some()).count();
        CavitySummary {
            cavities: self.cavities.len(),
            emitter_histogram: hist.clone(),
            lambda_per_cavity: lambda,
            chi_square: poisson_chi_square(&hist, lambda).ok(),
            zero_emitter_cavities: counts.iter().filter(|&&k| k == 0).count(),
            single_emitter_cavities: singles,
            multi_emitter_cavities: counts.iter().filter(|&&k| k > 1).count(),
            not_imaged: singles - records.len() - failures,
            targeting_failures: failures,
            targeting: summarize_targeting(&records),
        }
    }

    pub fn fits(&self) -> Vec<FitRow> {
        let s = &self.summary;
        let mut v = vec![
            FitRow::new("eta", self.eta, None, "1"),
            FitRow::new("lambda_per_cavity", s.lambda_per_cavity, None, "emitters"),
            FitRow::new(
                "single_emitter_fraction",
                s.single_emitter_cavities as f64 / s.cavities.max(1) as f64,
                None,
                "1",
            ),
        ];
        if let Some(c) = s.chi_square {
            v.push(FitRow::new("poisson_chi2", c.chi2, None, "1"));
            v.push(FitRow::new("poisson_p_value", c.p_value, None, "1"));
        }
        if let Some(t) = &s.targeting {
            v.push(FitRow::new("mean_distance", t.mean_distance_nm, Some(t.mean_distance_err_nm), "nm"));
            v.push(FitRow::new("std_distance", t.std_distance_nm, None, "nm"));
            v.push(FitRow::new("mean_offset_x", t.mean_offset_nm.x, None, "nm"));
            v.push(FitRow::new("mean_offset_y", t.mean_offset_nm.y, None, "nm"));
            v.push(FitRow::new("coverage_68", t.coverage_68, None, "1"));
        }
        v
    }

    pub fn sites_csv(&self) -> Result<String> {
        let header = [
            "cavity", "center_x_nm", "center_y_nm", "actual_x_nm", "actual_y_nm", "n_ions", "n_emitters", "maximum",
            "offset_x_nm", "offset_y_nm", "distance_nm", "distance_err_nm", "true_offset_x_nm", "true_offset_y_nm",
            "targeting_error",
        ];
        csv_string(&header, |w| {
            for (k, c) in self.cavities.iter().enumerate() {
                let t = c.targeting;
                w.write_record([
                    k.to_string(),
                    c.nominal_center.x.to_string(),
                    c.nominal_center.y.to_string(),
                    c.actual_center.x.to_string(),
                    c.actual_center.y.to_string(),
                    c.shots.iter().map(|s| s.n_ions).sum::<u64>().to_string(),
                    c.emitter_count().to_string(),
                    t.map(|t| t.maximum.to_string()).unwrap_or_default(),
                    opt(t.map(|t| t.offset_nm.x)),
                    opt(t.map(|t| t.offset_nm.y)),
                    opt(t.map(|t| t.distance_nm)),
                    opt(t.map(|t| t.distance_err_nm)),
                    opt(t.map(|t| t.true_offset_nm.x)),
                    opt(t.map(|t| t.true_offset_nm.y)),
                    c.targeting_error.clone().unwrap_or_default(),
                ])?;
            }
            Ok(())
        })
    }

    pub fn histogram_csv(&self) -> Result<String> {
        let s = &self.summary;
        let n = s.cavities as f64;
        let pois = |k: usize| {
            let l = s.lambda_per_cavity;
            (-l + k as f64 * l.ln() - (1..=k).map(|i| (i as f64).ln()).sum::<f64>()).exp()
        };
        csv_string(&["emitters", "cavities", "poisson_expected"], |w| {
            for (k, &c) in s.emitter_histogram.iter().enumerate() {
                let e = if s.lambda_per_cavity > 0.0 { n * pois(k) } else { f64::from(k == 0) * n };
                w.write_record([k.to_string(), c.to_string(), e.to_string()])?;
            }
            Ok(())
        })
    }
}

/// Relates a targeting measurement to the cavity's mode maxima. `emitter`
/// is the true lateral emitter position and `actual` the fabricated layout.
pub fn targeting_record(result: TargetingResult, nominal: &CavityLayout, actual: &CavityLayout, emitter: Point2D) -> TargetingRecord {
    let maximum = (0..nominal.mode_maxima.len())
        .min_by(|&a, &b| {
            result
                .offset
                .distance(nominal.mode_maxima[a])
                .total_cmp(&result.offset.distance(nominal.mode_maxima[b]))
        })
        .unwrap_or(0);
    let off = result.offset - nominal.mode_maxima[maximum];
    let d = off.norm();
    let (r, z) = (result.raman, result.zpl);
    let (vx, vy, cxy) = (r.var_x_nm2 + z.var_x_nm2, r.var_y_nm2 + z.var_y_nm2, r.cov_xy_nm2 + z.cov_xy_nm2);
    let var = if d > 0.0 {
        (off.x * off.x * vx + off.y * off.y * vy + 2.0 * off.x * off.y * cxy) / (d * d)
    } else {
        0.5 * (vx + vy)
    };
    TargetingRecord {
        maximum,
        result,
        offset_nm: off,
        distance_nm: d,
        distance_err_nm: var.max(0.0).sqrt(),
        true_offset_nm: emitter - actual.maximum(maximum),
    }
}

fn shifted(layout: &CavityLayout, by: Point2D) -> CavityLayout {
    let mut l = layout.clone();
    l.center = l.center + by;
    l
}

/// Implants `ions_per_maximum` ions at every mode maximum of each cavity,
/// tallies emitters per cavity and measures emitter-to-maximum offsets from
/// spectral cubes of single-emitter cavities.
pub fn run_cavity_campaign(cavities: &[CavityLayout], ions_per_maximum: u64, config: &CampaignConfig, seed: u64) -> Result<CampaignReport> {
    if cavities.is_empty() {
        return Err(Error::domain("cavity campaign needs at least one cavity"));
    }
    for c in cavities {
        c.validate()?;
    }
    let mut cfg = config.resolved(None)?;
    cfg.seed = seed;
    cfg.cavities.ions_per_maximum = ions_per_maximum;
    cfg.cavities.count = cavities.len();
    cfg.cavities.layouts = Vec::new();
    if cfg.cavities.resolved_layouts()? != cavities {
        cfg.cavities.layouts = cavities.to_vec();
    }
    let plan = cfg.cavities.clone();
    let energy = plan.energy_kev.unwrap_or(cfg.beam.energy_kev);
    let table = cfg.straggle_table()?;
    let surface = cfg.yield_surface()?;
    let lookup = surface.lookup(energy, plan.dose_per_cm2)?;
    let eta = crate::activation::apply_irradiation(lookup.eta, cfg.irradiation.fluence_per_cm2, &surface);
    let emission_nm = cfg.emission_wavelength_nm();
    let placement = cfg.experimental.ebl_placement_sigma_nm;
    let placement_dist = Normal::new(0.0, placement).map_err(|e| Error::domain(e.to_string()))?;
    let root = RandomSeed::new(seed).stream("cavity");

    let mut records: Vec<CavityRecord> = par::map_indexed(cavities.len(), |k| -> Result<CavityRecord> {
        let nominal = &cavities[k];
        let s = root.child(k as u64);
        let shift = if placement > 0.0 {
            let mut rng = s.stream("placement").rng();
            Point2D::new(placement_dist.sample(&mut rng), placement_dist.sample(&mut rng))
        } else {
            Point2D::ORIGIN
        };
        let shots = (0..nominal.mode_maxima.len())
            .map(|i| {
                let target = nominal.maximum(i);
                let shot = ImplantShot {
                    target,
                    requested_ions: ions_per_maximum,
                    energy_kev: energy,
                };
                let si = s.child(i as u64);
                let ions = sample_ion_positions(&shot, &cfg.beam, &table, &si.stream("ions"))?;
                let emitters = sample_emitters(&ions, eta, &cfg.population, &si.stream("activation"))?;
                Ok(SiteTruth {
                    target,
                    n_ions: ions_per_maximum,
                    ions,
                    emitters,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CavityRecord {
            nominal_center: nominal.center,
            actual_center: nominal.center + shift,
            shots,
            targeting: None,
            targeting_error: None,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let imaged: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.emitter_count() == 1)
        .map(|(k, _)| k)
        .take(plan.max_targeting_cubes)
        .collect();
    let measured = par::map_slice(&imaged, |_, &k| -> std::result::Result<TargetingRecord, String> {
        let r = &records[k];
        let nominal = &cavities[k];
        let actual = shifted(nominal, r.actual_center - r.nominal_center);
        let emitters: Vec<_> = r.shots.iter().flat_map(|s| s.emitters.iter().cloned()).collect();
        let spec = plan.cube.spec(nominal.center, emission_nm).map_err(|e| e.to_string())?;
        let cube = render_spectral_cube(&emitters, &actual, &spec, &root.child(k as u64).stream("cube"))
            .map_err(|e| e.to_string())?;
        let result = estimate_targeting(&cube, actual.raman_wavelength_nm, emission_nm, &plan.cube.targeting)
            .map_err(|e| e.to_string())?;
        Ok(targeting_record(result, nominal, &actual, emitters[0].position.lateral()))
    });
    for (k, m) in imaged.into_iter().zip(measured) {
        match m {
            Ok(t) => records[k].targeting = Some(t),
            Err(e) => records[k].targeting_error = Some(e),
        }
    }

    let mut beam_on_s = 0.0;
    for c in cavities {
        beam_on_s += c.mode_maxima.len() as f64 * plan_pulse(cfg.beam.current_pa, ions_per_maximum)? * 1e-6;
    }
    let n_sites: u64 = cavities.iter().map(|c| c.mode_maxima.len() as u64).sum();
    let wall = WallModel {
        n_sites,
        sites_per_s: cfg.throughput.sites_per_s,
        implant_s: throughput_estimate(n_sites, cfg.throughput.sites_per_s)?,
        beam_on_s,
    };
    let mut outcome = CavityOutcome {
        eta,
        eta_extrapolated: lookup.extrapolated,
        energy_kev: energy,
        ions_per_maximum,
        emission_nm,
        cavities: records,
        summary: CavitySummary::default(),
    };
    outcome.summary = outcome.recompute_summary();
    let max_ions = cfg.max_stored_ions;
    let mut report = CampaignReport::assemble(cfg, wall, Outcome::Cavity(outcome))?;
    report.thin_ions(max_ions);
    Ok(report)
}
