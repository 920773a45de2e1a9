use serde::{Deserialize, Serialize};

use crate::activation::sample_emitter_count;
use crate::error::{Error, Result};
use crate::foundation::RandomSeed;
use crate::par;

/// Implant-and-verify policy: repeat low-dose cycles until at least
/// `target_emitters` exist or `max_cycles` have run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolPolicy {
    pub ions_per_cycle: u64,
    pub target_emitters: u64,
    pub max_cycles: u32,
}

impl Default for ProtocolPolicy {
    fn default() -> Self {
        ProtocolPolicy {
            ions_per_cycle: 20,
            target_emitters: 1,
            max_cycles: 1000,
        }
    }
}

impl ProtocolPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.target_emitters < 1 {
            return Err(Error::domain("protocol target must be >= 1 emitter"));
        }
        if self.max_cycles < 1 {
            return Err(Error::domain("protocol needs max_cycles >= 1"));
        }
        Ok(())
    }
}

/// Outcome of one protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cycles: u32,
    pub emitters: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolStats {
    pub trials: usize,
    pub lambda_per_cycle: f64,
    pub mean_cycles: f64,
    /// Mean cycles of a single-emitter target without a cycle limit,
    /// truncated at `max_cycles`: (1 − qᴹ)/(1 − q), q = e^{−λ}.
    pub analytic_mean_cycles: Option<f64>,
    /// Fraction of trials that reached the target.
    pub success_fraction: f64,
    /// P(final count equals the target | target reached).
    pub exact_given_halted: f64,
    /// P(final count exceeds the target | target reached).
    pub overshoot_given_halted: f64,
    /// `final_count_histogram[k]` trials ended with k emitters.
    pub final_count_histogram: Vec<u64>,
}

impl ProtocolStats {
    /// Summary of a set of trial records.
    pub fn from_records(records: &[TrialRecord], policy: &ProtocolPolicy, lambda: f64) -> Self {
        let n = records.len();
        let nf = n.max(1) as f64;
        let halted: Vec<&TrialRecord> = records.iter().filter(|r| r.emitters >= policy.target_emitters).collect();
        let nh = halted.len();
        let exact = halted.iter().filter(|r| r.emitters == policy.target_emitters).count();
        let kmax = records.iter().map(|r| r.emitters).max().unwrap_or(0) as usize;
        let mut hist = vec![0u64; kmax + 1];
        for r in records {
            hist[r.emitters as usize] += 1;
        }
        let analytic = (policy.target_emitters == 1 && lambda > 0.0).then(|| {
            let q = (-lambda).exp();
            (1.0 - q.powi(policy.max_cycles as i32)) / (1.0 - q)
        });
        let ratio = |a: usize, b: usize| if b > 0 { a as f64 / b as f64 } else { 0.0 };
        ProtocolStats {
            trials: n,
            lambda_per_cycle: lambda,
            mean_cycles: records.iter().map(|r| r.cycles as f64).sum::<f64>() / nf,
            analytic_mean_cycles: analytic,
            success_fraction: ratio(nh, n),
            exact_given_halted: ratio(exact, nh),
            overshoot_given_halted: ratio(nh - exact, nh),
            final_count_histogram: hist,
        }
    }
}

/// Runs `trials` independent protocol runs. Trial t draws cycle c from seed
/// path (t, c), so results do not depend on scheduling.
pub fn simulate_protocol(policy: &ProtocolPolicy, eta: f64, seed: &RandomSeed, trials: usize) -> Result<Vec<TrialRecord>> {
    policy.validate()?;
    if trials < 1 {
        return Err(Error::domain("protocol needs at least one trial"));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("yield must lie in [0, 1], got {eta}")));
    }
    par::map_indexed(trials, |t| {
        let trial = seed.child(t as u64);
        let mut emitters = 0;
        let mut cycles = 0;
        while cycles < policy.max_cycles && emitters < policy.target_emitters {
            emitters += sample_emitter_count(policy.ions_per_cycle, eta, &trial.child(cycles as u64))?;
            cycles += 1;
        }
        Ok(TrialRecord { cycles, emitters })
    })
    .into_iter()
    .collect()
}

/// Conditional implant-and-verify statistics.
pub fn run_conditional_protocol(policy: &ProtocolPolicy, eta: f64, seed: &RandomSeed, trials: usize) -> Result<ProtocolStats> {
    let records = simulate_protocol(policy, eta, seed, trials)?;
    Ok(ProtocolStats::from_records(&records, policy, policy.ions_per_cycle as f64 * eta))
}

/// Write time at a given site rate.
pub fn throughput_estimate(n_sites: u64, sites_per_s: f64) -> Result<f64> {
    if !(sites_per_s > 0.0) {
        return Err(Error::domain(format!("site rate must be > 0, got {sites_per_s}")));
    }
    Ok(n_sites as f64 / sites_per_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(ions: u64) -> ProtocolPolicy {
        ProtocolPolicy {
            ions_per_cycle: ions,
            target_emitters: 1,
            max_cycles: 1000,
        }
    }

    #[test]
    fn throughput_arithmetic() {
        assert_eq!(throughput_estimate(1_000_000, 2e4).unwrap(), 50.0);
        assert_eq!(throughput_estimate(0, 3.0).unwrap(), 0.0);
        assert!((throughput_estimate(196, 2e4).unwrap() - 9.8e-3).abs() < 1e-15);
        assert!(throughput_estimate(1, 0.0).is_err());
    }

    #[test]
    fn large_lambda_needs_one_cycle() {
        let s = run_conditional_protocol(&policy(1000), 0.05, &RandomSeed::new(1), 2000).unwrap();
        assert_eq!(s.mean_cycles, 1.0);
        assert_eq!(s.success_fraction, 1.0);
    }

    #[test]
    fn cycle_cap_and_overshoot() {
        let p = ProtocolPolicy {
            ions_per_cycle: 10,
            target_emitters: 2,
            max_cycles: 3,
        };
        let recs = simulate_protocol(&p, 0.05, &RandomSeed::new(4), 5000).unwrap();
        assert!(recs.iter().all(|r| r.cycles >= 1 && r.cycles <= 3));
        assert!(recs.iter().any(|r| r.emitters < 2 && r.cycles == 3));
        let s = ProtocolStats::from_records(&recs, &p, 0.5);
        assert!(s.success_fraction < 1.0);
        assert!(s.analytic_mean_cycles.is_none());
        assert!((s.exact_given_halted + s.overshoot_given_halted - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_yield_runs_to_the_cap() {
        let s = run_conditional_protocol(&ProtocolPolicy { max_cycles: 7, ..policy(20) }, 0.0, &RandomSeed::new(1), 10).unwrap();
        assert_eq!(s.mean_cycles, 7.0);
        assert_eq!(s.success_fraction, 0.0);
    }

    #[test]
    fn invalid_policy() {
        let bad = ProtocolPolicy { target_emitters: 0, ..policy(1) };
        assert!(simulate_protocol(&bad, 0.1, &RandomSeed::new(1), 10).is_err());
        let bad = ProtocolPolicy { max_cycles: 0, ..policy(1) };
        assert!(simulate_protocol(&bad, 0.1, &RandomSeed::new(1), 10).is_err());
    }
}
