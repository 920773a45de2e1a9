use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::array::ArrayOutcome;
use super::cavity::CavityOutcome;
use super::config::CampaignConfig;
use super::irradiation::IrradiationOutcome;
use super::protocol::{ProtocolPolicy, ProtocolStats, TrialRecord};
use super::sweep::SweepOutcome;
use crate::activation::Emitter;
use crate::error::{Error, Result};
use crate::foundation::{Point2D, Point3D};

/// Version of the on-disk report layout.
pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ground truth of one exposure: where it aimed, the ions it delivered and
/// the emitters they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTruth {
    pub target: Point2D,
    pub n_ions: u64,
    /// Landing sites; possibly thinned, see [`CampaignReport::ion_stride`].
    pub ions: Vec<Point3D>,
    pub emitters: Vec<Emitter>,
}

/// Time model of the write: site rate and integrated beam-on time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WallModel {
    pub n_sites: u64,
    pub sites_per_s: f64,
    pub implant_s: f64,
    #[serde(default)]
    pub beam_on_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOutcome {
    pub policy: ProtocolPolicy,
    pub eta: f64,
    pub records: Vec<TrialRecord>,
    pub stats: ProtocolStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum Outcome {
    Array(ArrayOutcome),
    Sweep(SweepOutcome),
    Irradiation(IrradiationOutcome),
    Cavity(CavityOutcome),
    Protocol(ProtocolOutcome),
}

impl Outcome {
    pub fn kind(&self) -> &'static str {
        match self {
            Outcome::Array(_) => "array",
            Outcome::Sweep(_) => "sweep",
            Outcome::Irradiation(_) => "irradiation",
            Outcome::Cavity(_) => "cavity",
            Outcome::Protocol(_) => "protocol",
        }
    }
}

/// One fitted or derived quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub quantity: String,
    pub value: f64,
    pub uncertainty: Option<f64>,
    pub unit: String,
}

impl FitRow {
    pub fn new(quantity: &str, value: f64, uncertainty: Option<f64>, unit: &str) -> Self {
        FitRow {
            quantity: quantity.into(),
            value,
            uncertainty,
            unit: unit.into(),
        }
    }
}

/// Reproducible record of one simulated campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_digest: String,
    pub root_seed: u64,
    /// Resolved configuration; `config.seed` is the effective seed.
    pub config: CampaignConfig,
    pub wall_model: WallModel,
    /// Every `ion_stride`-th ion position is stored.
    #[serde(default = "one")]
    pub ion_stride: usize,
    pub outcome: Outcome,
}

fn one() -> usize {
    1
}

impl CampaignReport {
    pub(crate) fn assemble(config: CampaignConfig, wall_model: WallModel, outcome: Outcome) -> Result<Self> {
        Ok(CampaignReport {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            config_digest: config.digest()?,
            root_seed: config.seed,
            config,
            wall_model,
            ion_stride: 1,
            outcome,
        })
    }

    /// Thins stored ion positions so that at most `max` remain.
    pub(crate) fn thin_ions(&mut self, max: usize) {
        let sites: Vec<&mut SiteTruth> = match &mut self.outcome {
            Outcome::Array(a) => a.sites.iter_mut().map(|s| &mut s.truth).collect(),
            Outcome::Irradiation(i) => i.spots.iter_mut().map(|s| &mut s.truth).collect(),
            Outcome::Cavity(c) => c.cavities.iter_mut().flat_map(|c| c.shots.iter_mut()).collect(),
            _ => Vec::new(),
        };
        let total: usize = sites.iter().map(|s| s.ions.len()).sum();
        if max == 0 || total <= max {
            return;
        }
        let stride = total.div_ceil(max);
        // Counting across sites keeps every `stride`-th ion of the whole run.
        let mut k = 0usize;
        for s in sites {
            s.ions.retain(|_| {
                let keep = k.is_multiple_of(stride);
                k += 1;
                keep
            });
        }
        self.ion_stride = stride;
    }

    pub fn fits(&self) -> Vec<FitRow> {
        let mut rows = vec![
            FitRow::new("implant_time", self.wall_model.implant_s, None, "s"),
            FitRow::new("beam_on_time", self.wall_model.beam_on_s, None, "s"),
        ];
        rows.extend(match &self.outcome {
            Outcome::Array(a) => a.fits(),
            Outcome::Sweep(s) => s.fits(),
            Outcome::Irradiation(i) => i.fits(),
            Outcome::Cavity(c) => c.fits(),
            Outcome::Protocol(p) => protocol_fits(&p.stats),
        });
        rows
    }

    /// Checks that every stored summary equals its recomputation from the
    /// stored records.
    pub fn verify(&self) -> Result<()> {
        let ok = match &self.outcome {
            Outcome::Array(a) => a.summary == a.recompute_summary(),
            Outcome::Sweep(s) => s.summary == s.recompute_summary(),
            Outcome::Irradiation(i) => i.summary == i.recompute_summary(),
            Outcome::Cavity(c) => c.summary == c.recompute_summary(),
            Outcome::Protocol(p) => {
                p.stats == ProtocolStats::from_records(&p.records, &p.policy, p.stats.lambda_per_cycle)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Integrity("stored summary differs from its recomputation".into()))
        }
    }

    /// CSV tables written next to the report, by file name.
    pub fn tables(&self) -> Result<BTreeMap<String, String>> {
        let mut t = BTreeMap::new();
        t.insert("fits.csv".to_string(), fits_csv(&self.fits())?);
        match &self.outcome {
            Outcome::Array(a) => {
                t.insert("sites.csv".into(), a.sites_csv()?);
            }
            Outcome::Sweep(s) => {
                t.insert("sweep.csv".into(), s.sweep_csv()?);
            }
            Outcome::Irradiation(i) => {
                t.insert("sites.csv".into(), i.sites_csv()?);
                t.insert("profile.csv".into(), i.profile_csv()?);
            }
            Outcome::Cavity(c) => {
                t.insert("sites.csv".into(), c.sites_csv()?);
                t.insert("histogram.csv".into(), c.histogram_csv()?);
            }
            Outcome::Protocol(p) => {
                t.insert("protocol.csv".into(), protocol_csv(&p.stats)?);
            }
        }
        Ok(t)
    }
}

fn protocol_fits(s: &ProtocolStats) -> Vec<FitRow> {
    let mut v = vec![
        FitRow::new("lambda_per_cycle", s.lambda_per_cycle, None, "emitters"),
        FitRow::new("mean_cycles", s.mean_cycles, None, "cycles"),
        FitRow::new("success_fraction", s.success_fraction, None, "1"),
        FitRow::new("exact_given_halted", s.exact_given_halted, None, "1"),
        FitRow::new("overshoot_given_halted", s.overshoot_given_halted, None, "1"),
    ];
    if let Some(a) = s.analytic_mean_cycles {
        v.push(FitRow::new("analytic_mean_cycles", a, None, "cycles"));
    }
    v
}

pub(crate) fn csv_string<F>(header: &[&str], fill: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    fill(&mut w)?;
    let bytes = w.into_inner().map_err(|e| Error::domain(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::domain(e.to_string()))
}

/// Empty string for `None`.
pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fits_csv(rows: &[FitRow]) -> Result<String> {
    csv_string(&["quantity", "value", "uncertainty", "unit"], |w| {
        for r in rows {
            w.write_record([r.quantity.clone(), r.value.to_string(), opt(r.uncertainty), r.unit.clone()])?;
        }
        Ok(())
    })
}

fn protocol_csv(s: &ProtocolStats) -> Result<String> {
    csv_string(&["final_emitters", "trials"], |w| {
        for (k, n) in s.final_count_histogram.iter().enumerate() {
            w.write_record([k.to_string(), n.to_string()])?;
        }
        Ok(())
    })
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Index of a persisted report. Everything except `metadata` is a pure
/// function of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub kind: String,
    pub root_seed: u64,
    pub config_digest: String,
    /// SHA-256 of every file in the report directory.
    pub files: BTreeMap<String, String>,
    pub fits: Vec<FitRow>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, the CSV tables and `manifest.json` into `dir`.
pub fn persist_report(report: &CampaignReport, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = BTreeMap::new();
    let body = serde_json::to_vec(report)?;
    write_file(&dir.join(REPORT_FILE), &body)?;
    files.insert(REPORT_FILE.to_string(), sha256_hex(&body));
    for (name, text) in report.tables()? {
        write_file(&dir.join(&name), text.as_bytes())?;
        files.insert(name, sha256_hex(text.as_bytes()));
    }
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = Manifest {
        schema_version: report.schema_version,
        tool_version: report.tool_version.clone(),
        kind: report.outcome.kind().into(),
        root_seed: report.root_seed,
        config_digest: report.config_digest.clone(),
        files,
        fits: report.fits(),
        metadata: BTreeMap::from([("created_unix_s".to_string(), serde_json::Value::from(created))]),
    };
    write_file(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&text)
        .map_err(|e| Error::Integrity(format!("{}: unreadable manifest: {e}", path.display())))
}

/// Reads a report directory, checking file digests and the config digest.
/// Reports from other tool versions are parsed on a best-effort basis; their
/// version is preserved in [`CampaignReport::tool_version`].
pub fn load_report(dir: &Path) -> Result<CampaignReport> {
    let manifest = load_manifest(dir)?;
    let path = dir.join(REPORT_FILE);
    let body = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    match manifest.files.get(REPORT_FILE) {
        Some(d) if *d == sha256_hex(&body) => {}
        Some(_) => {
            return Err(Error::Integrity(format!(
                "{} does not match its digest (truncated or modified)",
                path.display()
            )))
        }
        None => return Err(Error::Integrity("manifest lists no report file".into())),
    }
    let report: CampaignReport = serde_json::from_slice(&body).map_err(|e| {
        Error::Integrity(format!(
            "cannot parse report written by version {} (schema {}): {e}",
            manifest.tool_version, manifest.schema_version
        ))
    })?;
    let digest = report.config.digest()?;
    if digest != report.config_digest || digest != manifest.config_digest {
        if report.tool_version == TOOL_VERSION {
            return Err(Error::Integrity("config digest mismatch".into()));
        }
        // Older writers may have serialized fewer config fields; the stored
        // digest must still agree between manifest and report.
        if report.config_digest != manifest.config_digest {
            return Err(Error::Integrity("config digest mismatch".into()));
        }
    }
    Ok(report)
}
