use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldEstimate {
    pub eta: f64,
    /// Poisson counting error on η.
    pub eta_err: f64,
    /// Inferred number of emitters in the region.
    pub emitters: f64,
}

/// η = (region_rate / single_rate) / n_ions. The error treats the inferred
/// emitter number as a Poisson count.
pub fn estimate_yield(region_rate_kcps: f64, single_rate_kcps: f64, n_ions: f64) -> Result<YieldEstimate> {
    if !(single_rate_kcps > 0.0) {
        return Err(Error::domain("single-emitter rate must be > 0"));
    }
    if !(n_ions > 0.0) {
        return Err(Error::domain("ion number must be > 0"));
    }
    if !(region_rate_kcps >= 0.0) {
        return Err(Error::domain("region rate must be >= 0"));
    }
    let emitters = region_rate_kcps / single_rate_kcps;
    Ok(YieldEstimate {
        eta: emitters / n_ions,
        eta_err: emitters.sqrt() / n_ions,
        emitters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        let e = estimate_yield(750.0, 30.0, 1000.0).unwrap();
        assert!((e.eta - 0.025).abs() < 1e-15);
        assert!((e.eta_err - 5.0 / 1000.0).abs() < 1e-15);
        assert_eq!(estimate_yield(0.0, 30.0, 10.0).unwrap().eta, 0.0);
        assert!(estimate_yield(1.0, 0.0, 10.0).is_err());
        assert!(estimate_yield(1.0, 1.0, 0.0).is_err());
    }
}
