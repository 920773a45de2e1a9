//! Conversion yield η(energy, dose).
//!
//! The surface is a grid over energy (keV) and log₁₀ dose (cm⁻²), bilinearly
//! interpolated. Queries up to a factor of two beyond the grid edges are
//! answered by linear extrapolation and flagged. Extrapolation goes through
//! ghost nodes placed at those limits; ghost values are the linearly
//! extrapolated node values, adjusted only where needed to keep the extended
//! grid monotone, so interpolation in the ghost cells never breaks the
//! surface's monotonicity.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed-form parameters used to populate the default grid:
/// η(E, D) = η₁₀₀ · (E / 100 keV)^a · (D / 10¹² cm⁻²)^(−b), clipped to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YieldModel {
    pub eta_at_100kev_1e12: f64,
    pub energy_exponent: f64,
    pub dose_exponent: f64,
}

impl Default for YieldModel {
    fn default() -> Self {
        // The energy exponent is chosen so that linear extrapolation of the
        // 10–100 keV grid reaches ~3 % at 160 keV.
        YieldModel {
            eta_at_100kev_1e12: 0.025,
            energy_exponent: 0.388,
            dose_exponent: 0.3,
        }
    }
}

impl YieldModel {
    pub fn eta(&self, energy_kev: f64, dose_per_cm2: f64) -> f64 {
        let v = self.eta_at_100kev_1e12
            * (energy_kev / 100.0).powf(self.energy_exponent)
            * (dose_per_cm2 / 1e12).powf(-self.dose_exponent);
        v.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YieldLookup {
    pub eta: f64,
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrradiationParams {
    /// Yield multiplier once the electron fluence reaches `activation_fluence_per_cm2`.
    pub multiplier: f64,
    pub yield_cap: f64,
    pub activation_fluence_per_cm2: f64,
}

impl Default for IrradiationParams {
    fn default() -> Self {
        IrradiationParams {
            multiplier: 10.0,
            yield_cap: 1.0,
            activation_fluence_per_cm2: 1e17,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridRow {
    energy_kev: f64,
    dose_cm2: f64,
    eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "YieldSurfaceRepr", into = "YieldSurfaceRepr")]
pub struct YieldSurface {
    energies_kev: Vec<f64>,
    log10_doses: Vec<f64>,
    /// `eta[i][j]` at `energies_kev[i]`, `log10_doses[j]`.
    eta: Vec<Vec<f64>>,
    pub irradiation: IrradiationParams,
    // Grid including ghost nodes, derived from the above.
    ext_energies: Vec<f64>,
    ext_log_doses: Vec<f64>,
    ext_eta: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct YieldSurfaceRepr {
    energies_kev: Vec<f64>,
    log10_doses_per_cm2: Vec<f64>,
    eta: Vec<Vec<f64>>,
    irradiation: IrradiationParams,
}

impl TryFrom<YieldSurfaceRepr> for YieldSurface {
    type Error = Error;
    fn try_from(r: YieldSurfaceRepr) -> Result<Self> {
        YieldSurface::new(r.energies_kev, r.log10_doses_per_cm2, r.eta, r.irradiation)
    }
}

impl From<YieldSurface> for YieldSurfaceRepr {
    fn from(s: YieldSurface) -> Self {
        YieldSurfaceRepr {
            energies_kev: s.energies_kev,
            log10_doses_per_cm2: s.log10_doses,
            eta: s.eta,
            irradiation: s.irradiation,
        }
    }
}

impl Default for YieldSurface {
    fn default() -> Self {
        let energies: Vec<f64> = (1..=10).map(|k| 10.0 * k as f64).collect();
        let log_doses: Vec<f64> = (0..=4).map(|k| 12.0 + 0.5 * k as f64).collect();
        YieldSurface::from_model(&YieldModel::default(), &energies, &log_doses)
            .expect("default yield surface is valid")
    }
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::InvalidTable(format!("{name} axis is empty")));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTable(format!("{name} axis has non-finite values")));
    }
    if axis.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidTable(format!("{name} axis must be strictly increasing")));
    }
    Ok(())
}

/// Segment index and fractional position for interpolation on `axis`.
fn locate(axis: &[f64], x: f64) -> (usize, f64) {
    if axis.len() == 1 {
        return (0, 0.0);
    }
    let i = axis
        .partition_point(|&a| a <= x)
        .saturating_sub(1)
        .min(axis.len() - 2);
    (i, (x - axis[i]) / (axis[i + 1] - axis[i]))
}

fn linear_ghost(near: f64, next: f64, near_x: f64, next_x: f64, ghost_x: f64) -> f64 {
    if near_x == next_x {
        return near;
    }
    near + (near - next) / (near_x - next_x) * (ghost_x - near_x)
}

impl YieldSurface {
    pub fn new(
        energies_kev: Vec<f64>,
        log10_doses: Vec<f64>,
        eta: Vec<Vec<f64>>,
        irradiation: IrradiationParams,
    ) -> Result<Self> {
        check_axis("energy", &energies_kev)?;
        check_axis("log10 dose", &log10_doses)?;
        if energies_kev[0] <= 0.0 {
            return Err(Error::InvalidTable("energies must be positive".into()));
        }
        if eta.len() != energies_kev.len() || eta.iter().any(|r| r.len() != log10_doses.len()) {
            return Err(Error::InvalidTable("η grid shape does not match its axes".into()));
        }
        if eta.iter().flatten().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidTable("η values must lie in [0, 1]".into()));
        }
        for i in 0..energies_kev.len() {
            for j in 0..log10_doses.len() {
                if i + 1 < energies_kev.len() && eta[i + 1][j] < eta[i][j] {
                    return Err(Error::InvalidTable(format!(
                        "η decreases with energy between {} and {} keV",
                        energies_kev[i],
                        energies_kev[i + 1]
                    )));
                }
                if j + 1 < log10_doses.len() && eta[i][j + 1] > eta[i][j] {
                    return Err(Error::InvalidTable(format!(
                        "η increases with dose at {} keV",
                        energies_kev[i]
                    )));
                }
            }
        }
        if !(irradiation.multiplier >= 1.0)
            || !(irradiation.yield_cap > 0.0 && irradiation.yield_cap <= 1.0)
            || !(irradiation.activation_fluence_per_cm2 >= 0.0)
        {
            return Err(Error::InvalidTable(
                "irradiation multiplier must be >= 1 and yield cap in (0, 1]".into(),
            ));
        }
        let mut s = YieldSurface {
            energies_kev,
            log10_doses,
            eta,
            irradiation,
            ext_energies: Vec::new(),
            ext_log_doses: Vec::new(),
            ext_eta: Vec::new(),
        };
        s.build_extension();
        Ok(s)
    }

    pub fn from_model(model: &YieldModel, energies_kev: &[f64], log10_doses: &[f64]) -> Result<Self> {
        let eta = energies_kev
            .iter()
            .map(|&e| log10_doses.iter().map(|&ld| model.eta(e, 10f64.powf(ld))).collect())
            .collect();
        Self::new(
            energies_kev.to_vec(),
            log10_doses.to_vec(),
            eta,
            IrradiationParams::default(),
        )
    }

    /// Surface with every η equal to `value`.
    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![10.0, 200.0], vec![10.0, 16.0], vec![vec![value; 2]; 2], IrradiationParams::default())
    }

    pub fn energies_kev(&self) -> &[f64] {
        &self.energies_kev
    }

    pub fn log10_doses(&self) -> &[f64] {
        &self.log10_doses
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.eta
    }

    fn build_extension(&mut self) {
        let ne = self.energies_kev.len();
        let e_lo = self.energies_kev[0] / 2.0;
        let e_hi = self.energies_kev[ne - 1] * 2.0;
        // Ghost energy columns, indexed by dose.
        let low_e: Vec<f64> = {
            let raw: Vec<f64> = (0..self.log10_doses.len())
                .map(|j| {
                    let (a, b) = (self.eta[0][j], self.eta[ne.min(2) - 1][j]);
                    linear_ghost(a, b, self.energies_kev[0], self.energies_kev[ne.min(2) - 1], e_lo)
                })
                .collect();
            // Must stay <= the edge column and non-increasing in dose.
            let mut out = raw.clone();
            let mut run = f64::INFINITY;
            for (j, v) in out.iter_mut().enumerate() {
                run = run.min(raw[j].min(self.eta[0][j]));
                *v = run;
            }
            out
        };
        let high_e: Vec<f64> = {
            let raw: Vec<f64> = (0..self.log10_doses.len())
                .map(|j| {
                    let (a, b) = (self.eta[ne - 1][j], self.eta[ne.saturating_sub(2)][j]);
                    linear_ghost(a, b, self.energies_kev[ne - 1], self.energies_kev[ne.saturating_sub(2)], e_hi)
                })
                .collect();
            let mut out = raw.clone();
            let mut run = f64::NEG_INFINITY;
            for j in (0..out.len()).rev() {
                run = run.max(raw[j].max(self.eta[ne - 1][j]));
                out[j] = run;
            }
            out
        };
        let mut energies = Vec::with_capacity(ne + 2);
        energies.push(e_lo);
        energies.extend_from_slice(&self.energies_kev);
        energies.push(e_hi);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(ne + 2);
        cols.push(low_e);
        cols.extend(self.eta.iter().cloned());
        cols.push(high_e);

        // Ghost dose rows over the energy-extended grid.
        let nd = self.log10_doses.len();
        let ld = &self.log10_doses;
        let x_lo = ld[0] - std::f64::consts::LN_2 / std::f64::consts::LN_10;
        let x_hi = ld[nd - 1] + std::f64::consts::LN_2 / std::f64::consts::LN_10;
        let j2 = nd.min(2) - 1;
        let jm = nd.saturating_sub(2);
        let raw_low: Vec<f64> = cols
            .iter()
            .map(|c| linear_ghost(c[0], c[j2], ld[0], ld[j2], x_lo).max(c[0]))
            .collect();
        let raw_high: Vec<f64> = cols
            .iter()
            .map(|c| linear_ghost(c[nd - 1], c[jm], ld[nd - 1], ld[jm], x_hi).min(c[nd - 1]))
            .collect();
        // Low-dose ghost: >= edge row, non-decreasing in energy.
        let mut run = f64::NEG_INFINITY;
        let low_d: Vec<f64> = raw_low.iter().map(|&v| {
            run = run.max(v);
            run
        }).collect();
        // High-dose ghost: <= edge row, non-decreasing in energy.
        let mut high_d = raw_high.clone();
        let mut run = f64::INFINITY;
        for i in (0..high_d.len()).rev() {
            run = run.min(raw_high[i]);
            high_d[i] = run;
        }
        let mut log_doses = Vec::with_capacity(nd + 2);
        log_doses.push(x_lo);
        log_doses.extend_from_slice(ld);
        log_doses.push(x_hi);
        let ext_eta = cols
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut row = Vec::with_capacity(nd + 2);
                row.push(low_d[i]);
                row.extend_from_slice(c);
                row.push(high_d[i]);
                row
            })
            .collect();
        self.ext_energies = energies;
        self.ext_log_doses = log_doses;
        self.ext_eta = ext_eta;
    }

    /// η at (energy, dose). Bilinear in (energy, log₁₀ dose).
    pub fn lookup(&self, energy_kev: f64, dose_per_cm2: f64) -> Result<YieldLookup> {
        if !(dose_per_cm2 > 0.0) {
            return Err(Error::domain(format!("dose must be > 0, got {dose_per_cm2}")));
        }
        let x = dose_per_cm2.log10();
        let (e0, e1) = (self.ext_energies[0], *self.ext_energies.last().unwrap());
        let (x0, x1) = (self.ext_log_doses[0], *self.ext_log_doses.last().unwrap());
        let tol = 1e-12;
        if !(energy_kev >= e0 * (1.0 - tol) && energy_kev <= e1 * (1.0 + tol)) {
            return Err(Error::OutOfRange { quantity: "energy_kev", value: energy_kev, min: e0, max: e1 });
        }
        if !(x >= x0 - tol && x <= x1 + tol) {
            return Err(Error::OutOfRange {
                quantity: "dose_per_cm2",
                value: dose_per_cm2,
                min: 10f64.powf(x0),
                max: 10f64.powf(x1),
            });
        }
        let energy = energy_kev.clamp(e0, e1);
        let x = x.clamp(x0, x1);
        let (i, s) = locate(&self.ext_energies, energy);
        let (j, t) = locate(&self.ext_log_doses, x);
        let g = &self.ext_eta;
        let v = (1.0 - s) * ((1.0 - t) * g[i][j] + t * g[i][j + 1])
            + s * ((1.0 - t) * g[i + 1][j] + t * g[i + 1][j + 1]);
        let ne = self.energies_kev.len();
        let nd = self.log10_doses.len();
        let extrapolated = energy < self.energies_kev[0]
            || energy > self.energies_kev[ne - 1]
            || x < self.log10_doses[0] - tol
            || x > self.log10_doses[nd - 1] + tol;
        Ok(YieldLookup { eta: v.clamp(0.0, 1.0), extrapolated })
    }

    /// Reads `energy_keV,dose_cm2,eta` rows forming a full rectangular grid.
    pub fn from_csv_reader<R: std::io::Read>(reader: R, irradiation: IrradiationParams) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["energy_keV", "dose_cm2", "eta"];
        if headers.len() != 3 || !headers.iter().zip(expected).all(|(h, e)| h.eq_ignore_ascii_case(e)) {
            return Err(Error::parse("yield grid", format!("expected header {}", expected.join(","))));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec[k].parse::<f64>().map_err(|e| {
                    Error::parse("yield grid", format!("line {}: {}: {e}", rec.position().map_or(0, |p| p.line()), expected[k]))
                })
            };
            rows.push(GridRow { energy_kev: field(0)?, dose_cm2: field(1)?, eta: field(2)? });
        }
        let mut energies: Vec<f64> = rows.iter().map(|r| r.energy_kev).collect();
        energies.sort_by(f64::total_cmp);
        energies.dedup();
        let mut doses: Vec<f64> = rows.iter().map(|r| r.dose_cm2).collect();
        doses.sort_by(f64::total_cmp);
        doses.dedup();
        if doses.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidTable("doses must be positive".into()));
        }
        let mut grid = vec![vec![f64::NAN; doses.len()]; energies.len()];
        for r in &rows {
            let i = energies.iter().position(|&e| e == r.energy_kev).unwrap();
            let j = doses.iter().position(|&d| d == r.dose_cm2).unwrap();
            grid[i][j] = r.eta;
        }
        if grid.iter().flatten().any(|v| v.is_nan()) || rows.len() != energies.len() * doses.len() {
            return Err(Error::InvalidTable("yield grid is not a complete rectangular grid".into()));
        }
        Self::new(energies, doses.iter().map(|d| d.log10()).collect(), grid, irradiation)
    }

    pub fn load_csv(path: &Path, irradiation: IrradiationParams) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f, irradiation)
    }
}

/// [`YieldSurface::lookup`] as a free function.
pub fn yield_lookup(surface: &YieldSurface, energy_kev: f64, dose_per_cm2: f64) -> Result<YieldLookup> {
    surface.lookup(energy_kev, dose_per_cm2)
}

/// Step-function electron-irradiation enhancement.
pub fn apply_irradiation(eta: f64, fluence_per_cm2: f64, surface: &YieldSurface) -> f64 {
    let p = &surface.irradiation;
    if fluence_per_cm2 > 0.0 && fluence_per_cm2 >= p.activation_fluence_per_cm2 {
        (eta * p.multiplier).min(p.yield_cap)
    } else {
        eta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_anchor_at_100kev() {
        let s = YieldSurface::default();
        let l = s.lookup(100.0, 1e12).unwrap();
        assert!((l.eta - 0.025).abs() < 1e-12);
        assert!(!l.extrapolated);
    }

    #[test]
    fn extrapolated_cavity_energy() {
        let s = YieldSurface::default();
        let l = s.lookup(160.0, 1e12).unwrap();
        assert!(l.extrapolated);
        assert!((l.eta - 0.03).abs() < 0.002, "{}", l.eta);
    }

    #[test]
    fn limits() {
        let s = YieldSurface::default();
        assert!(s.lookup(100.0, 0.0).is_err());
        assert!(s.lookup(100.0, -1.0).is_err());
        assert!(s.lookup(201.0, 1e12).is_err());
        assert!(s.lookup(4.0, 1e12).is_err());
        assert!(s.lookup(100.0, 2.01e14).is_err());
        assert!(s.lookup(200.0, 2e14).unwrap().extrapolated);
        assert!(s.lookup(5.0, 5e11).unwrap().extrapolated);
    }

    #[test]
    fn zero_surface() {
        let s = YieldSurface::constant(0.0).unwrap();
        assert_eq!(s.lookup(57.0, 3e13).unwrap().eta, 0.0);
    }

    #[test]
    fn irradiation_step() {
        let s = YieldSurface::default();
        assert!((apply_irradiation(0.02, 1e17, &s) - 0.20).abs() < 1e-15);
        assert_eq!(apply_irradiation(0.025, 0.0, &s), 0.025);
        assert_eq!(apply_irradiation(0.2, 1e17, &s), 1.0);
        assert_eq!(apply_irradiation(0.02, 1e15, &s), 0.02);
    }

    #[test]
    fn rejects_non_monotone() {
        let r = YieldSurface::new(
            vec![10.0, 20.0],
            vec![12.0],
            vec![vec![0.2], vec![0.1]],
            IrradiationParams::default(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn csv_grid() {
        let csv = "energy_keV,dose_cm2,eta\n10,1e12,0.01\n10,1e14,0.005\n100,1e12,0.025\n100,1e14,0.01\n";
        let s = YieldSurface::from_csv_reader(csv.as_bytes(), IrradiationParams::default()).unwrap();
        assert!((s.lookup(100.0, 1e13).unwrap().eta - 0.0175).abs() < 1e-12);
        let bad = "energy_keV,dose_cm2,eta\n10,1e12,0.01\n";
        assert!(YieldSurface::from_csv_reader(&bad.as_bytes()[..20], IrradiationParams::default()).is_err());
    }

    fn monotone_grid() -> impl Strategy<Value = YieldSurface> {
        (1usize..5, 1usize..5).prop_flat_map(|(ne, nd)| {
            (
                proptest::collection::vec(1.0f64..60.0, ne),
                proptest::collection::vec(0.05f64..1.5, nd),
                proptest::collection::vec(0.0f64..0.2, ne * nd),
            )
                .prop_map(move |(de, dd, inc)| {
                    let energies: Vec<f64> = de.iter().scan(5.0, |a, d| { *a += d; Some(*a) }).collect();
                    let doses: Vec<f64> = dd.iter().scan(11.0, |a, d| { *a += d; Some(*a) }).collect();
                    // Build η increasing in i and decreasing in j from cumulative increments.
                    let mut g = vec![vec![0.0; nd]; ne];
                    for i in 0..ne {
                        for j in (0..nd).rev() {
                            let below = if i > 0 { g[i - 1][j] } else { 0.0 };
                            let right: f64 = if j + 1 < nd { g[i][j + 1] } else { 0.0 };
                            g[i][j] = (below.max(right) + inc[i * nd + j]).min(1.0);
                        }
                    }
                    YieldSurface::new(energies, doses, g, IrradiationParams::default()).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn lookup_is_monotone(s in monotone_grid(), u in 0.0f64..1.0, v in 0.0f64..1.0, w in 0.0f64..1.0, q in 0.0f64..1.0) {
            let e0 = s.energies_kev()[0] / 2.0;
            let e1 = s.energies_kev().last().unwrap() * 2.0;
            let x0 = s.log10_doses()[0] - std::f64::consts::LOG10_2;
            let x1 = s.log10_doses().last().unwrap() + std::f64::consts::LOG10_2;
            let (ea, eb) = (e0 + (e1 - e0) * u.min(v), e0 + (e1 - e0) * u.max(v));
            let (xa, xb) = (x0 + (x1 - x0) * w.min(q), x0 + (x1 - x0) * w.max(q));
            let d = |x: f64| 10f64.powf(x);
            let at = |e, x| s.lookup(e, d(x)).unwrap().eta;
            prop_assert!(at(ea, xa) <= at(eb, xa) + 1e-12);
            prop_assert!(at(ea, xa) >= at(ea, xb) - 1e-12);
            prop_assert!((0.0..=1.0).contains(&at(ea, xb)));
        }
    }
}
