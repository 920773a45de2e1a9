use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareTest {
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson χ² goodness of fit of a count histogram (`histogram[k]` = number
/// of trials with outcome k) against Poisson(`lambda`). Adjacent classes are
/// pooled until each expects at least 5 trials; the last class is the upper
/// tail.
pub fn poisson_chi_square(histogram: &[u64], lambda: f64) -> Result<ChiSquareTest> {
    if !(lambda > 0.0) {
        return Err(Error::domain("Poisson mean must be > 0"));
    }
    let n: u64 = histogram.iter().sum();
    if n == 0 {
        return Err(Error::domain("histogram is empty"));
    }
    let dist = Poisson::new(lambda).map_err(|e| Error::domain(e.to_string()))?;
    let nf = n as f64;
    let kmax = histogram.len().max(1) - 1;
    let mut classes: Vec<(f64, f64)> = Vec::new();
    let (mut obs, mut exp) = (0.0, 0.0);
    let mut cum_p = 0.0;
    for k in 0..=kmax {
        let p = dist.pmf(k as u64);
        cum_p += p;
        obs += histogram[k] as f64;
        exp += p * nf;
        if exp >= 5.0 {
            classes.push((obs, exp));
            obs = 0.0;
            exp = 0.0;
        }
    }
    exp += (1.0 - cum_p).max(0.0) * nf;
    match classes.last_mut() {
        Some(last) if exp < 5.0 => {
            last.0 += obs;
            last.1 += exp;
        }
        _ => classes.push((obs, exp)),
    }
    if classes.len() < 2 {
        return Err(Error::domain("too few populated classes for a chi-square test"));
    }
    let chi2: f64 = classes.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = classes.len() - 1;
    let p_value = 1.0 - ChiSquared::new(dof as f64)
        .map_err(|e| Error::domain(e.to_string()))?
        .cdf(chi2);
    Ok(ChiSquareTest { chi2, dof, p_value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_expectations_give_zero() {
        let lambda: f64 = 1.8;
        let n = 1e6;
        let dist = Poisson::new(lambda).unwrap();
        let hist: Vec<u64> = (0..12).map(|k| (dist.pmf(k) * n).round() as u64).collect();
        let t = poisson_chi_square(&hist, lambda).unwrap();
        assert!(t.p_value > 0.99, "{t:?}");
    }

    #[test]
    fn wrong_mean_rejected() {
        let dist = Poisson::new(1.0).unwrap();
        let hist: Vec<u64> = (0..10).map(|k| (dist.pmf(k) * 1e4).round() as u64).collect();
        let t = poisson_chi_square(&hist, 1.8).unwrap();
        assert!(t.p_value < 1e-6);
    }
}
