use serde::{Deserialize, Serialize};

use super::confocal::poisson_draw;
use crate::error::{Error, Result};
use crate::foundation::RandomSeed;

/// Parameters of g²(τ) = 1 − a·exp(−|τ/t1|) + b·exp(−|τ/t2|).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Params {
    pub a: f64,
    pub b: f64,
    pub t1_ns: f64,
    pub t2_ns: f64,
}

impl G2Params {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.a) {
            return Err(Error::domain(format!("g2 amplitude a = {} not in [0, 1]", self.a)));
        }
        if !(self.b >= 0.0) {
            return Err(Error::domain("g2 amplitude b must be >= 0"));
        }
        if !(self.t1_ns > 0.0 && self.t2_ns > 0.0) {
            return Err(Error::domain("g2 time constants must be > 0"));
        }
        Ok(())
    }

    pub fn value(&self, tau_ns: f64) -> f64 {
        g2_model(tau_ns, self.a, self.b, self.t1_ns, self.t2_ns)
    }

    pub fn g2_zero(&self) -> f64 {
        1.0 - self.a + self.b
    }
}

#[inline]
pub fn g2_model(tau_ns: f64, a: f64, b: f64, t1_ns: f64, t2_ns: f64) -> f64 {
    let t = tau_ns.abs();
    1.0 - a * (-t / t1_ns).exp() + b * (-t / t2_ns).exp()
}

/// Normalized coincidence histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Histogram {
    pub tau_ns: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl G2Histogram {
    pub fn validate(&self) -> Result<()> {
        let n = self.tau_ns.len();
        if self.values.len() != n || self.sigma.len() != n {
            return Err(Error::domain("g2 columns have different lengths"));
        }
        if self.values.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::domain("g2 values must be >= 0"));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::domain("g2 uncertainties must be > 0"));
        }
        check_symmetric(&self.tau_ns)
    }

    pub fn len(&self) -> usize {
        self.tau_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_ns.is_empty()
    }
}

fn check_symmetric(tau: &[f64]) -> Result<()> {
    if tau.is_empty() {
        return Err(Error::domain("g2 histogram has no bins"));
    }
    if tau.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("g2 delays must be strictly increasing"));
    }
    let scale = tau.iter().fold(0.0f64, |m, t| m.max(t.abs())).max(1.0);
    let n = tau.len();
    if (0..n).any(|i| (tau[i] + tau[n - 1 - i]).abs() > 1e-9 * scale) {
        return Err(Error::domain("g2 delay bins must be symmetric about zero"));
    }
    Ok(())
}

/// Delay bin centres −n·Δ, …, 0, …, n·Δ.
pub fn symmetric_delays(half_range_ns: f64, bins_per_side: usize) -> Vec<f64> {
    let n = bins_per_side as i64;
    let step = half_range_ns / bins_per_side.max(1) as f64;
    (-n..=n).map(|k| k as f64 * step).collect()
}

/// Synthesizes a normalized g² histogram. Each bin holds Poisson counts
/// around N₀·g(τ) with N₀ = total_counts / bins; values are divided by N₀.
/// Without a seed the noiseless model is returned with the same error bars.
pub fn synth_g2(
    params: &G2Params,
    tau_ns: &[f64],
    total_counts: f64,
    seed: Option<&RandomSeed>,
) -> Result<G2Histogram> {
    params.validate()?;
    check_symmetric(tau_ns)?;
    if !(total_counts > 0.0) {
        return Err(Error::domain("total coincidence counts must be > 0"));
    }
    let n0 = total_counts / tau_ns.len() as f64;
    let mut values = Vec::with_capacity(tau_ns.len());
    let mut sigma = Vec::with_capacity(tau_ns.len());
    for (i, &t) in tau_ns.iter().enumerate() {
        let mean = n0 * params.value(t);
        let raw = match seed {
            Some(s) => poisson_draw(mean, &mut s.child(i as u64).rng()) as f64,
            None => mean,
        };
        values.push(raw / n0);
        sigma.push(raw.max(1.0).sqrt() / n0);
    }
    Ok(G2Histogram {
        tau_ns: tau_ns.to_vec(),
        values,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_values() {
        assert!((g2_model(0.0, 0.80, 0.18, 1.0, 10.0) - 0.38).abs() < 1e-12);
        assert!((g2_model(1e6, 0.80, 0.18, 1.0, 10.0) - 1.0).abs() < 1e-12);
        assert_eq!(g2_model(0.0, 1.0, 0.0, 2.0, 5.0), 0.0);
    }

    #[test]
    fn symmetric_bins_required() {
        let p = G2Params {
            a: 0.8,
            b: 0.18,
            t1_ns: 2.0,
            t2_ns: 50.0,
        };
        assert!(synth_g2(&p, &[-2.0, 0.0, 1.0], 1e4, None).is_err());
        let tau = symmetric_delays(30.0, 30);
        let h = synth_g2(&p, &tau, 1e5, Some(&RandomSeed::new(1))).unwrap();
        h.validate().unwrap();
        assert_eq!(h, synth_g2(&p, &tau, 1e5, Some(&RandomSeed::new(1))).unwrap());
        let clean = synth_g2(&p, &tau, 1e5, None).unwrap();
        assert!((clean.values[30] - 0.38).abs() < 1e-12);
    }

    #[test]
    fn invalid_amplitudes() {
        let p = G2Params {
            a: 1.2,
            b: 0.0,
            t1_ns: 1.0,
            t2_ns: 1.0,
        };
        assert!(synth_g2(&p, &symmetric_delays(5.0, 5), 1e3, None).is_err());
    }

    proptest::proptest! {
        #[test]
        fn model_is_even(tau in -500.0f64..500.0, a in 0.0f64..1.0, b in 0.0f64..2.0,
                         t1 in 0.1f64..50.0, t2 in 0.1f64..500.0) {
            proptest::prop_assert_eq!(g2_model(tau, a, b, t1, t2), g2_model(-tau, a, b, t1, t2));
        }
    }
}
