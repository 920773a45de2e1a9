//! Damped least squares (Levenberg–Marquardt) with central-difference
//! Jacobians and Marquardt diagonal scaling.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged when every |Δp_j| ≤ xtol·(|p_j| + xtol).
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            xtol: 1e-10,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// (JᵀJ)⁻¹ of the weighted residuals at the solution.
    pub covariance: DMatrix<f64>,
    /// False when JᵀJ was numerically singular and a pseudo-inverse was used.
    pub covariance_reliable: bool,
    /// Sum of squared weighted residuals.
    pub chi2: f64,
    pub n_obs: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl LmResult {
    pub fn dof(&self) -> usize {
        self.n_obs.saturating_sub(self.params.len())
    }

    pub fn reduced_chi2(&self) -> f64 {
        match self.dof() {
            0 => f64::NAN,
            d => self.chi2 / d as f64,
        }
    }

    /// 1σ standard errors, treating the residual weights as exact.
    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.params.len())
            .map(|i| self.covariance[(i, i)].max(0.0).sqrt())
            .collect()
    }

    pub fn residual_norm(&self) -> f64 {
        self.chi2.sqrt()
    }
}

/// A weighted residual vector r(p); the optimizer minimizes |r|².
pub trait Residuals {
    fn n_obs(&self) -> usize;
    /// Writes r(p) into `out`; returns false if `p` is outside the model's
    /// domain.
    fn eval(&self, p: &[f64], out: &mut [f64]) -> bool;
}

impl<F> Residuals for (usize, F)
where
    F: Fn(&[f64], &mut [f64]) -> bool,
{
    fn n_obs(&self) -> usize {
        self.0
    }
    fn eval(&self, p: &[f64], out: &mut [f64]) -> bool {
        (self.1)(p, out)
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Central-difference Jacobian of `f` at `p` (rows: observations).
pub fn numeric_jacobian<R: Residuals>(f: &R, p: &[f64], scale: &[f64]) -> Option<DMatrix<f64>> {
    let n = f.n_obs();
    let mut jac = DMatrix::zeros(n, p.len());
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = 6e-6 * p[j].abs().max(scale[j]);
        q[j] = p[j] + h;
        let ok_plus = f.eval(&q, &mut plus);
        q[j] = p[j] - h;
        let ok_minus = f.eval(&q, &mut minus);
        q[j] = p[j];
        if !ok_plus || !ok_minus {
            return None;
        }
        let inv = 1.0 / (2.0 * h);
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) * inv;
        }
    }
    Some(jac)
}

/// Inverse of a symmetric positive semi-definite matrix; falls back to a
/// pseudo-inverse and reports `false` when it is numerically singular.
pub fn spd_inverse(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = max * 1e-13;
    let reliable = max > 0.0 && eig.eigenvalues.iter().all(|&v| v > cutoff);
    let inv_vals = eig
        .eigenvalues
        .map(|v| if v > cutoff { 1.0 / v } else { 0.0 });
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&inv_vals) * v.transpose(), reliable)
}

/// Minimizes |r(p)|² starting from `p0`.
pub fn levenberg_marquardt<R: Residuals>(f: &R, p0: &[f64], opts: &LmOptions) -> Result<LmResult> {
    let n = f.n_obs();
    let m = p0.len();
    if m == 0 {
        return Err(Error::domain("no parameters to fit"));
    }
    if n < m {
        return Err(Error::FitFailed {
            reason: format!("{n} observations for {m} parameters"),
            residual_norm: f64::NAN,
        });
    }
    let scale: Vec<f64> = p0.iter().map(|v| v.abs().max(1e-6)).collect();
    let mut p = p0.to_vec();
    let mut r = vec![0.0; n];
    if !f.eval(&p, &mut r) || r.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitFailed {
            reason: "model is not finite at the initial guess".into(),
            residual_norm: f64::NAN,
        });
    }
    let mut chi2 = sum_sq(&r);
    let mut lambda = opts.initial_lambda;
    let mut trial = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jac = numeric_jacobian(f, &p, &scale).ok_or_else(|| Error::FitFailed {
            reason: "model left its domain while differentiating".into(),
            residual_norm: chi2.sqrt(),
        })?;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let dmax = a.diagonal().iter().fold(0.0f64, |x, v| x.max(*v));
        if dmax == 0.0 {
            converged = true;
            break;
        }
        let diag: Vec<f64> = a.diagonal().iter().map(|v| v.max(dmax * 1e-12)).collect();
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for (j, d) in diag.iter().enumerate() {
                damped[(j, j)] += lambda * d;
            }
            let step = match damped.cholesky() {
                Some(c) => c.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let cand: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if f.eval(&cand, &mut trial) && trial.iter().all(|v| v.is_finite()) {
                let c2 = sum_sq(&trial);
                if c2 <= chi2 {
                    let small = step
                        .iter()
                        .zip(&cand)
                        .all(|(d, x)| d.abs() <= opts.xtol * (x.abs() + opts.xtol));
                    p = cand;
                    std::mem::swap(&mut r, &mut trial);
                    let stalled = c2 == chi2;
                    chi2 = c2;
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = true;
                    if small || stalled {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No downhill step exists at working precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    let jac = numeric_jacobian(f, &p, &scale).ok_or_else(|| Error::FitFailed {
        reason: "model left its domain at the solution".into(),
        residual_norm: chi2.sqrt(),
    })?;
    let (covariance, covariance_reliable) = spd_inverse(&(jac.transpose() * &jac));
    Ok(LmResult {
        params: p,
        covariance,
        covariance_reliable,
        chi2,
        n_obs: n,
        iterations,
        converged,
    })
}

/// Fits `model(x, p)` to `y` with per-point σ (unit weights when `None`).
pub fn curve_fit<M>(
    model: M,
    x: &[f64],
    y: &[f64],
    sigma: Option<&[f64]>,
    p0: &[f64],
    opts: &LmOptions,
) -> Result<LmResult>
where
    M: Fn(f64, &[f64]) -> f64,
{
    if x.len() != y.len() || sigma.is_some_and(|s| s.len() != y.len()) {
        return Err(Error::domain("curve_fit inputs differ in length"));
    }
    let f = (x.len(), |p: &[f64], out: &mut [f64]| {
        for i in 0..x.len() {
            let w = sigma.map_or(1.0, |s| 1.0 / s[i]);
            out[i] = (model(x[i], p) - y[i]) * w;
        }
        true
    });
    levenberg_marquardt(&f, p0, opts)
}
