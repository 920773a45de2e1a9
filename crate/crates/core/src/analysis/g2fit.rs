use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOptions, LmResult};
use crate::error::{Error, Result};
use crate::imaging::{g2_model, G2Histogram};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// A fitted quantity with its standard error and 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

impl Estimate {
    pub fn new(value: f64, std_err: f64) -> Self {
        Estimate {
            value,
            std_err,
            ci95_low: value - Z95 * std_err,
            ci95_high: value + Z95 * std_err,
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        truth >= self.ci95_low && truth <= self.ci95_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Fit {
    pub a: Estimate,
    pub b: Estimate,
    pub t1_ns: Estimate,
    pub t2_ns: Estimate,
    /// 1 − a + b, with the interval from the (a, b) covariance.
    pub g2_zero: Estimate,
    pub is_single: bool,
    /// False when the parameter covariance was singular.
    pub ci_reliable: bool,
    pub reduced_chi2: f64,
}

fn initial_guess(h: &G2Histogram) -> (f64, f64, f64) {
    let n = h.len();
    let zero = (0..n)
        .min_by(|&i, &j| h.tau_ns[i].abs().total_cmp(&h.tau_ns[j].abs()))
        .unwrap_or(0);
    let g0 = h.values[zero];
    let peak = h.values.iter().cloned().fold(f64::MIN, f64::max);
    let b = (peak - 1.0).max(0.0);
    let a = (1.0 - g0 + b).clamp(0.0, 1.0);
    let span = h.tau_ns.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let half = 0.5 * (g0 + peak.max(1.0));
    let t_half = h
        .tau_ns
        .iter()
        .zip(&h.values)
        .filter(|(t, v)| **t > 0.0 && **v >= half)
        .map(|(t, _)| *t)
        .fold(f64::INFINITY, f64::min);
    let step = span / (n as f64 / 2.0).max(1.0);
    let t1 = if t_half.is_finite() {
        (t_half / std::f64::consts::LN_2).max(step)
    } else {
        span / 10.0
    };
    (a, b, t1)
}

fn run(h: &G2Histogram, p0: [f64; 4]) -> Result<LmResult> {
    let f = (h.len(), |p: &[f64], out: &mut [f64]| {
        if !(p[2] > 0.0 && p[3] > 0.0) {
            return false;
        }
        for i in 0..h.len() {
            out[i] = (g2_model(h.tau_ns[i], p[0], p[1], p[2], p[3]) - h.values[i]) / h.sigma[i];
        }
        true
    });
    levenberg_marquardt(&f, &p0, &LmOptions::default())
}

/// Weighted least-squares fit of 1 − a·e^{−|τ/t1|} + b·e^{−|τ/t2|}.
pub fn fit_g2(hist: &G2Histogram) -> Result<G2Fit> {
    hist.validate()?;
    if hist.len() < 20 {
        return Err(Error::domain(format!(
            "g2 fit needs at least 20 bins, got {}",
            hist.len()
        )));
    }
    let (a0, b0, t1) = initial_guess(hist);
    let span = hist.tau_ns.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if span < 5.0 * t1 {
        return Err(Error::domain(format!(
            "delay range ±{span} ns is shorter than 5× the antibunching time guess {t1:.2} ns"
        )));
    }
    let mut best: Option<LmResult> = None;
    for mult in [3.0, 6.0, 12.0] {
        let t2 = (mult * t1).min(span / 5.0).max(t1 * 1.5);
        if let Ok(fit) = run(hist, [a0, b0, t1, t2]) {
            if best.as_ref().is_none_or(|b| fit.chi2 < b.chi2) {
                best = Some(fit);
            }
        }
    }
    let fit = best.ok_or_else(|| Error::FitFailed {
        reason: "g2 fit failed from every starting point".into(),
        residual_norm: f64::NAN,
    })?;
    let p = &fit.params;
    let e = fit.std_errors();
    let c = &fit.covariance;
    let var_zero = (c[(0, 0)] + c[(1, 1)] - 2.0 * c[(0, 1)]).max(0.0);
    let g2_zero = 1.0 - p[0] + p[1];
    Ok(G2Fit {
        a: Estimate::new(p[0], e[0]),
        b: Estimate::new(p[1], e[1]),
        t1_ns: Estimate::new(p[2], e[2]),
        t2_ns: Estimate::new(p[3], e[3]),
        g2_zero: Estimate::new(g2_zero, var_zero.sqrt()),
        is_single: g2_zero < 0.5,
        ci_reliable: fit.covariance_reliable && fit.converged,
        reduced_chi2: fit.reduced_chi2(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::foundation::RandomSeed;
    use crate::imaging::{symmetric_delays, synth_g2, G2Params};

    fn params() -> G2Params {
        G2Params {
            a: 0.80,
            b: 0.18,
            t1_ns: 2.0,
            t2_ns: 10.0,
        }
    }

    #[test]
    fn noiseless_model() {
        let h = synth_g2(&params(), &symmetric_delays(60.0, 60), 2e5, None).unwrap();
        let f = fit_g2(&h).unwrap();
        assert!((f.g2_zero.value - 0.38).abs() < 1e-8, "{:?}", f.g2_zero);
        assert!(f.is_single);
        assert!((f.t1_ns.value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn flat_histogram() {
        let tau = symmetric_delays(50.0, 25);
        let h = G2Histogram {
            values: vec![1.0; tau.len()],
            sigma: vec![0.05; tau.len()],
            tau_ns: tau,
        };
        let f = fit_g2(&h).unwrap();
        assert!(f.a.value.abs() < 1e-12 && f.b.value.abs() < 1e-12);
        assert!((f.g2_zero.value - 1.0).abs() < 1e-12);
        assert!(!f.is_single);
        assert!(!f.ci_reliable);
    }

    #[test]
    fn classification_ignores_error_scale() {
        let h = synth_g2(&params(), &symmetric_delays(60.0, 60), 1e5, Some(&RandomSeed::new(3))).unwrap();
        let mut scaled = h.clone();
        scaled.sigma.iter_mut().for_each(|s| *s *= 7.5);
        let a = fit_g2(&h).unwrap();
        let b = fit_g2(&scaled).unwrap();
        assert_eq!(a.is_single, b.is_single);
        assert!((a.g2_zero.value - b.g2_zero.value).abs() < 1e-6);
        assert!((b.g2_zero.std_err / a.g2_zero.std_err - 7.5).abs() < 1e-3);
    }

    #[test]
    fn threshold_is_strict() {
        let p = G2Params { a: 0.5, b: 0.0, t1_ns: 2.0, t2_ns: 10.0 };
        let h = synth_g2(&p, &symmetric_delays(60.0, 60), 2e5, None).unwrap();
        let f = fit_g2(&h).unwrap();
        assert!((f.g2_zero.value - 0.5).abs() < 1e-6);
    }

    #[test]
    fn too_few_bins() {
        let h = synth_g2(&params(), &symmetric_delays(60.0, 5), 2e5, None).unwrap();
        assert!(fit_g2(&h).is_err());
    }
}
