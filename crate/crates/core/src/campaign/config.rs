use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::activation::{IrradiationParams, SpectralPopulation, YieldModel, YieldSurface};
use crate::analysis::{LocalizeOptions, TargetingOptions};
use crate::error::{Error, Result};
use crate::foundation::units::frequency_to_wavelength;
use crate::foundation::Point2D;
use crate::imaging::{CavityLayout, CubeSpec, ImageGeometry, PsfSpec, WavelengthAxis};
use crate::implantation::{BeamSpec, StraggleTable};

use super::protocol::ProtocolPolicy;

/// Where the straggle table comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum StraggleSource {
    #[default]
    Builtin,
    Csv { path: PathBuf },
    Inline { entries: StraggleTable },
}

/// Where the conversion-yield surface comes from. The irradiation parameters
/// always come from [`IrradiationSchedule`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum YieldSource {
    #[default]
    Builtin,
    /// The same η everywhere.
    Constant { eta: f64 },
    Model {
        model: YieldModel,
        energies_kev: Vec<f64>,
        log10_doses_per_cm2: Vec<f64>,
    },
    /// `energy_keV,dose_cm2,eta` grid file.
    Csv { path: PathBuf },
    Inline { surface: YieldSurface },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrradiationSchedule {
    /// Electron fluence applied after implantation; zero means none.
    pub fluence_per_cm2: f64,
    pub params: IrradiationParams,
}

impl Default for IrradiationSchedule {
    fn default() -> Self {
        IrradiationSchedule {
            fluence_per_cm2: 0.0,
            params: IrradiationParams::default(),
        }
    }
}

/// Confocal imaging used by the array, sweep and irradiation campaigns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    pub numerical_aperture: f64,
    pub wavelength_nm: f64,
    pub pixel_pitch_nm: f64,
    pub dwell_ms: f64,
    pub background_kcps: f64,
    /// Extra field scanned around the outermost sites.
    pub margin_nm: f64,
    pub localize: LocalizeOptions,
    /// Single-emitter intensity used by the single-site filter; the median of
    /// the localized sites when absent.
    pub single_reference_counts: Option<f64>,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        ImagingConfig {
            numerical_aperture: 1.3,
            wavelength_nm: 737.0,
            pixel_pitch_nm: 100.0,
            dwell_ms: 10.0,
            background_kcps: 1.0,
            margin_nm: 1500.0,
            localize: LocalizeOptions::default(),
            single_reference_counts: None,
        }
    }
}

impl ImagingConfig {
    pub fn psf(&self) -> Result<PsfSpec> {
        PsfSpec::new(self.numerical_aperture, self.wavelength_nm)
    }

    pub fn validate(&self) -> Result<()> {
        self.psf()?;
        if !(self.pixel_pitch_nm > 0.0) || !(self.dwell_ms > 0.0) {
            return Err(Error::domain("imaging pixel pitch and dwell must be > 0"));
        }
        if !(self.background_kcps >= 0.0) || !(self.margin_nm >= 0.0) {
            return Err(Error::domain("imaging background and margin must be >= 0"));
        }
        Ok(())
    }
}

/// Square array of single-point exposures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayPlan {
    pub columns: usize,
    pub rows: usize,
    pub pitch_nm: f64,
    pub ions_per_site: u64,
    /// Dose at which the yield surface is read.
    pub dose_per_cm2: f64,
}

impl Default for ArrayPlan {
    fn default() -> Self {
        ArrayPlan {
            columns: 14,
            rows: 14,
            pitch_nm: 2140.0,
            ions_per_site: 40,
            dose_per_cm2: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub energies_kev: Vec<f64>,
    pub doses_per_cm2: Vec<f64>,
    /// Side of the uniformly exposed square.
    pub region_side_nm: f64,
    /// Cells whose nominal ion number exceeds this simulate a proportionally
    /// smaller area at the same dose.
    pub max_ions_per_cell: u64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            energies_kev: vec![10.0, 55.0, 100.0],
            doses_per_cm2: vec![1e12, 1e13, 1e14],
            region_side_nm: 10_000.0,
            max_ions_per_cell: 10_000,
        }
    }
}

/// Spots exposed in a row for the electron-irradiation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpotPlan {
    pub ions_per_spot: Vec<u64>,
    pub spacing_nm: f64,
    pub dose_per_cm2: f64,
    /// Fluence used for the "after" image when the schedule has none.
    pub fluence_per_cm2: f64,
}

impl Default for SpotPlan {
    fn default() -> Self {
        SpotPlan {
            ions_per_spot: vec![500, 2000, 5000, 10_000],
            spacing_nm: 5000.0,
            dose_per_cm2: 1e12,
            fluence_per_cm2: 1e17,
        }
    }
}

/// Spectrally resolved scan around each cavity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CubeConfig {
    pub numerical_aperture: f64,
    pub pump_wavelength_nm: f64,
    pub pixel_pitch_nm: f64,
    /// Half side of the square scan, centred on the nominal cavity centre.
    pub half_width_nm: f64,
    pub dwell_ms: f64,
    pub axis_start_nm: f64,
    pub axis_stop_nm: f64,
    pub axis_bins: usize,
    pub raman_rate_kcps: f64,
    pub raman_fwhm_nm: f64,
    pub zpl_fwhm_nm: f64,
    pub zpl_nominal_nm: f64,
    pub background_kcps_per_nm: f64,
    pub targeting: TargetingOptions,
}

impl Default for CubeConfig {
    fn default() -> Self {
        CubeConfig {
            numerical_aperture: 0.95,
            pump_wavelength_nm: 532.0,
            pixel_pitch_nm: 40.0,
            half_width_nm: 600.0,
            dwell_ms: 0.04,
            axis_start_nm: 560.0,
            axis_stop_nm: 760.0,
            axis_bins: 400,
            raman_rate_kcps: 2000.0,
            raman_fwhm_nm: 0.5,
            zpl_fwhm_nm: 5.0,
            zpl_nominal_nm: 738.3,
            background_kcps_per_nm: 0.005,
            targeting: TargetingOptions::default(),
        }
    }
}

impl CubeConfig {
    pub fn spec(&self, center: Point2D, emission_nm: f64) -> Result<CubeSpec> {
        let n = (2.0 * self.half_width_nm / self.pixel_pitch_nm).round() as usize + 1;
        let spec = CubeSpec {
            geometry: ImageGeometry::centered(center, self.pixel_pitch_nm, n, self.dwell_ms),
            axis: WavelengthAxis::new(self.axis_start_nm, self.axis_stop_nm, self.axis_bins)?,
            pump_psf: PsfSpec::new(self.numerical_aperture, self.pump_wavelength_nm)?,
            zpl_psf: PsfSpec::new(self.numerical_aperture, emission_nm)?,
            raman_rate_kcps: self.raman_rate_kcps,
            raman_fwhm_nm: self.raman_fwhm_nm,
            zpl_fwhm_nm: self.zpl_fwhm_nm,
            zpl_nominal_nm: self.zpl_nominal_nm,
            background_kcps_per_nm: self.background_kcps_per_nm,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavityPlan {
    /// Explicit layouts. When empty, `count` L3 cavities are laid out on a
    /// square grid of `spacing_nm`.
    pub layouts: Vec<CavityLayout>,
    pub count: usize,
    pub lattice_constant_nm: f64,
    pub hole_radius_nm: f64,
    pub spacing_nm: f64,
    pub ions_per_maximum: u64,
    /// Overrides the beam energy for cavity implants.
    pub energy_kev: Option<f64>,
    pub dose_per_cm2: f64,
    /// Cubes are rendered for at most this many single-emitter cavities.
    pub max_targeting_cubes: usize,
    pub cube: CubeConfig,
}

impl Default for CavityPlan {
    fn default() -> Self {
        CavityPlan {
            layouts: Vec::new(),
            count: 2000,
            lattice_constant_nm: 250.0,
            hole_radius_nm: 75.0,
            spacing_nm: 5000.0,
            ions_per_maximum: 20,
            energy_kev: Some(160.0),
            dose_per_cm2: 1e12,
            max_targeting_cubes: 100,
            cube: CubeConfig::default(),
        }
    }
}

impl CavityPlan {
    pub fn resolved_layouts(&self) -> Result<Vec<CavityLayout>> {
        if !self.layouts.is_empty() {
            for l in &self.layouts {
                l.validate()?;
            }
            return Ok(self.layouts.clone());
        }
        let side = (self.count as f64).sqrt().ceil().max(1.0) as usize;
        (0..self.count)
            .map(|k| {
                let c = Point2D::new(
                    (k % side) as f64 * self.spacing_nm,
                    (k / side) as f64 * self.spacing_nm,
                );
                CavityLayout::l3(c, self.lattice_constant_nm, self.hole_radius_nm)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolPlan {
    pub policy: ProtocolPolicy,
    /// Per-ion conversion probability; read from the yield surface at the
    /// beam energy and `dose_per_cm2` when absent.
    pub eta: Option<f64>,
    pub dose_per_cm2: f64,
    pub trials: usize,
}

impl Default for ProtocolPlan {
    fn default() -> Self {
        ProtocolPlan {
            policy: ProtocolPolicy::default(),
            eta: None,
            dose_per_cm2: 1e12,
            trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThroughputConfig {
    pub sites_per_s: f64,
}

impl Default for ThroughputConfig {
    fn default() -> Self {
        ThroughputConfig { sites_per_s: 2e4 }
    }
}

/// Hooks that are not part of the validated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentalConfig {
    /// Random placement error of each fabricated cavity relative to its
    /// design position (lithography overlay), σ per axis.
    pub ebl_placement_sigma_nm: f64,
}

/// Everything a campaign needs, with explicit units in every key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    pub beam: BeamSpec,
    pub straggle: StraggleSource,
    pub yield_surface: YieldSource,
    pub irradiation: IrradiationSchedule,
    pub population: SpectralPopulation,
    pub imaging: ImagingConfig,
    pub array: ArrayPlan,
    pub sweep: SweepPlan,
    pub spots: SpotPlan,
    pub cavities: CavityPlan,
    pub protocol: ProtocolPlan,
    pub throughput: ThroughputConfig,
    pub experimental: ExperimentalConfig,
    /// Per-ion positions beyond this many are thinned in stored reports.
    pub max_stored_ions: usize,
    /// Free-form process notes (anneal recipe, cleaning); carried, not used.
    pub fabrication: BTreeMap<String, String>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            seed: 0,
            beam: BeamSpec::default(),
            straggle: StraggleSource::default(),
            yield_surface: YieldSource::default(),
            irradiation: IrradiationSchedule::default(),
            population: SpectralPopulation::default(),
            imaging: ImagingConfig::default(),
            array: ArrayPlan::default(),
            sweep: SweepPlan::default(),
            spots: SpotPlan::default(),
            cavities: CavityPlan::default(),
            protocol: ProtocolPlan::default(),
            throughput: ThroughputConfig::default(),
            experimental: ExperimentalConfig::default(),
            max_stored_ions: 1_000_000,
            fabrication: BTreeMap::new(),
        }
    }
}

fn resolve_path(path: &Path, base: Option<&Path>) -> PathBuf {
    match base {
        Some(b) if path.is_relative() => b.join(path),
        _ => path.to_path_buf(),
    }
}

impl CampaignConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn digest(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn straggle_table(&self) -> Result<StraggleTable> {
        match &self.straggle {
            StraggleSource::Builtin => Ok(StraggleTable::default()),
            StraggleSource::Csv { path } => StraggleTable::load_csv(path),
            StraggleSource::Inline { entries } => Ok(entries.clone()),
        }
    }

    /// The yield surface with this config's irradiation parameters.
    pub fn yield_surface(&self) -> Result<YieldSurface> {
        let p = self.irradiation.params;
        let s = match &self.yield_surface {
            YieldSource::Builtin => YieldSurface::default(),
            YieldSource::Constant { eta } => YieldSurface::constant(*eta)?,
            YieldSource::Model {
                model,
                energies_kev,
                log10_doses_per_cm2,
            } => YieldSurface::from_model(model, energies_kev, log10_doses_per_cm2)?,
            YieldSource::Csv { path } => return YieldSurface::load_csv(path, p),
            YieldSource::Inline { surface } => surface.clone(),
        };
        YieldSurface::new(
            s.energies_kev().to_vec(),
            s.log10_doses().to_vec(),
            s.grid().to_vec(),
            p,
        )
    }

    /// Copy with file references replaced by their contents, so the config
    /// alone reproduces a run. Relative paths are taken from `base`.
    pub fn resolved(&self, base: Option<&Path>) -> Result<Self> {
        let mut c = self.clone();
        if let StraggleSource::Csv { path } = &self.straggle {
            let table = StraggleTable::load_csv(&resolve_path(path, base))?;
            c.straggle = StraggleSource::Inline { entries: table };
        }
        if let YieldSource::Csv { path } = &self.yield_surface {
            let surface = YieldSurface::load_csv(&resolve_path(path, base), self.irradiation.params)?;
            c.yield_surface = YieldSource::Inline { surface };
        }
        c.validate()?;
        Ok(c)
    }

    /// Emission wavelength of the population centre.
    pub fn emission_wavelength_nm(&self) -> f64 {
        frequency_to_wavelength(self.population.inhomogeneous_center_ghz)
    }

    pub fn validate(&self) -> Result<()> {
        self.beam.validate()?;
        self.population.validate()?;
        self.imaging.validate()?;
        self.straggle_table()?;
        self.yield_surface()?;
        if !(self.array.pitch_nm > 0.0) {
            return Err(Error::domain(format!("array pitch must be > 0, got {}", self.array.pitch_nm)));
        }
        if !(self.sweep.region_side_nm > 0.0) || self.sweep.max_ions_per_cell == 0 {
            return Err(Error::domain("sweep region and ion cap must be > 0"));
        }
        if !(self.spots.spacing_nm > 0.0) {
            return Err(Error::domain("spot spacing must be > 0"));
        }
        if !(self.throughput.sites_per_s > 0.0) {
            return Err(Error::domain("throughput rate must be > 0"));
        }
        if !(self.experimental.ebl_placement_sigma_nm >= 0.0) {
            return Err(Error::domain("placement error must be >= 0"));
        }
        self.protocol.policy.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_lossless() {
        let mut c = CampaignConfig {
            seed: 99,
            yield_surface: YieldSource::Constant { eta: 0.3 },
            ..CampaignConfig::default()
        };
        c.fabrication.insert("anneal".into(), "1200 C, 2 h".into());
        let text = c.to_json().unwrap();
        let back = CampaignConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest().unwrap(), c.digest().unwrap());
    }

    #[test]
    fn partial_config_takes_defaults() {
        let c = CampaignConfig::from_json(r#"{"seed": 7, "array": {"pitch_nm": 1000}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.array.pitch_nm, 1000.0);
        assert_eq!(c.array.columns, 14);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CampaignConfig::from_json(r#"{"array": {"pitch": 1000}}"#).is_err());
    }

    #[test]
    fn csv_tables_are_inlined() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("y.csv"),
            "energy_keV,dose_cm2,eta\n10,1e12,0.01\n100,1e12,0.02\n10,1e14,0.005\n100,1e14,0.01\n",
        )
        .unwrap();
        let c = CampaignConfig {
            yield_surface: YieldSource::Csv { path: "y.csv".into() },
            ..CampaignConfig::default()
        };
        assert!(c.resolved(None).is_err());
        let r = c.resolved(Some(dir.path())).unwrap();
        assert!(matches!(r.yield_surface, YieldSource::Inline { .. }));
        assert_eq!(r.yield_surface().unwrap().lookup(100.0, 1e12).unwrap().eta, 0.02);
    }

    #[test]
    fn bad_pitch() {
        let mut c = CampaignConfig::default();
        c.array.pitch_nm = 0.0;
        assert!(c.validate().is_err());
    }
}
