//! Reproducible simulated experiments built from the forward model and the
//! analysis pipeline, with persisted, checksummed reports.

mod array;
mod cavity;
mod config;
mod irradiation;
mod protocol;
mod report;
mod sweep;

pub use array::{run_array_campaign, ArrayOutcome, ArraySummary, SiteRecord};
pub use cavity::{
    run_cavity_campaign, summarize_targeting, targeting_record, CavityOutcome, CavityRecord, CavitySummary,
    TargetingRecord, TargetingSummary,
};
pub use config::{
    ArrayPlan, CampaignConfig, CavityPlan, CubeConfig, ExperimentalConfig, ImagingConfig, IrradiationSchedule,
    ProtocolPlan, SpotPlan, StraggleSource, SweepPlan, ThroughputConfig, YieldSource,
};
pub use irradiation::{run_irradiation_comparison, IrradiationOutcome, IrradiationSummary, LineProfile, SpotRecord};
pub use protocol::{
    run_conditional_protocol, simulate_protocol, throughput_estimate, ProtocolPolicy, ProtocolStats, TrialRecord,
};
pub use report::{
    load_manifest, load_report, persist_report, CampaignReport, FitRow, Manifest, Outcome, ProtocolOutcome, SiteTruth,
    WallModel, SCHEMA_VERSION, TOOL_VERSION,
};
pub use sweep::{run_sweep_campaign, SweepCell, SweepOutcome, SweepSummary};

use crate::error::Result;
use crate::foundation::RandomSeed;
use crate::implantation::plan_pulse;

/// Implant-and-verify protocol with the config's policy. The yield comes
/// from `protocol.eta` or, if absent, from the surface at the beam energy.
pub fn run_protocol_campaign(config: &CampaignConfig, seed: u64) -> Result<CampaignReport> {
    let mut cfg = config.resolved(None)?;
    cfg.seed = seed;
    let plan = cfg.protocol;
    let eta = match plan.eta {
        Some(e) => e,
        None => {
            let surface = cfg.yield_surface()?;
            let l = surface.lookup(cfg.beam.energy_kev, plan.dose_per_cm2)?;
            crate::activation::apply_irradiation(l.eta, cfg.irradiation.fluence_per_cm2, &surface)
        }
    };
    let records = simulate_protocol(&plan.policy, eta, &RandomSeed::new(seed).stream("protocol"), plan.trials)?;
    let lambda = plan.policy.ions_per_cycle as f64 * eta;
    let stats = ProtocolStats::from_records(&records, &plan.policy, lambda);
    let cycles: u64 = records.iter().map(|r| r.cycles as u64).sum();
    let n_sites = plan.trials as u64;
    let wall = WallModel {
        n_sites,
        sites_per_s: cfg.throughput.sites_per_s,
        implant_s: throughput_estimate(n_sites, cfg.throughput.sites_per_s)?,
        beam_on_s: cycles as f64 * plan_pulse(cfg.beam.current_pa, plan.policy.ions_per_cycle)? * 1e-6,
    };
    let outcome = ProtocolOutcome {
        policy: plan.policy,
        eta,
        records,
        stats,
    };
    CampaignReport::assemble(cfg, wall, Outcome::Protocol(outcome))
}
