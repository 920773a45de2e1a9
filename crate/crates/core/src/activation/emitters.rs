use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundation::units::{sigma_from_fwhm, wavelength_to_frequency};
use crate::foundation::{lifetime_limited_linewidth_mhz, Point3D, RandomSeed};

/// One optical transition relative to the emitter's ZPL centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub label: String,
    pub offset_ghz: f64,
    pub weight: f64,
}

/// Fine-structure template shared by all emitters of a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineStructure {
    pub transitions: Vec<Transition>,
}

impl Default for FineStructure {
    /// Four-line template from ground/excited splittings of 48 and 259 GHz,
    /// symmetric about the centre. Weights are configured, C brightest.
    fn default() -> Self {
        let t = |label: &str, offset_ghz, weight| Transition {
            label: label.into(),
            offset_ghz,
            weight,
        };
        FineStructure {
            transitions: vec![
                t("A", 153.5, 0.15),
                t("B", 105.5, 0.20),
                t("C", -105.5, 0.40),
                t("D", -153.5, 0.25),
            ],
        }
    }
}

impl FineStructure {
    /// Single transition at the centre, for C-line-only simulations.
    pub fn c_only() -> Self {
        FineStructure {
            transitions: vec![Transition {
                label: "C".into(),
                offset_ghz: 0.0,
                weight: 1.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::domain("fine structure needs at least one transition"));
        }
        if self.transitions.iter().any(|t| !(t.weight >= 0.0)) {
            return Err(Error::domain("branching weights must be >= 0"));
        }
        let total: f64 = self.transitions.iter().map(|t| t.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("branching weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// A created optically active defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub position: Point3D,
    pub zpl_center_ghz: f64,
    pub homogeneous_fwhm_mhz: f64,
    /// Peak-pixel detected rate under reference conditions, kcts/s.
    pub brightness_kcps: f64,
}

/// Distribution from which emitter spectral properties are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralPopulation {
    pub inhomogeneous_center_ghz: f64,
    pub inhomogeneous_fwhm_ghz: f64,
    /// Median of the log-normal homogeneous linewidth distribution.
    pub homogeneous_median_mhz: f64,
    /// σ of ln(linewidth).
    pub homogeneous_shape: f64,
    pub lifetime_ns: f64,
    pub brightness_kcps: f64,
    #[serde(default)]
    pub fine_structure: FineStructure,
}

impl Default for SpectralPopulation {
    fn default() -> Self {
        SpectralPopulation::with_mean_linewidth(
            wavelength_to_frequency(737.0),
            51.0,
            200.0,
            0.3,
            1.7,
            30.0,
        )
    }
}

impl SpectralPopulation {
    /// Picks the log-normal median so that the distribution mean equals
    /// `mean_mhz`.
    pub fn with_mean_linewidth(
        center_ghz: f64,
        inhomogeneous_fwhm_ghz: f64,
        mean_mhz: f64,
        shape: f64,
        lifetime_ns: f64,
        brightness_kcps: f64,
    ) -> Self {
        SpectralPopulation {
            inhomogeneous_center_ghz: center_ghz,
            inhomogeneous_fwhm_ghz,
            homogeneous_median_mhz: mean_mhz * (-0.5 * shape * shape).exp(),
            homogeneous_shape: shape,
            lifetime_ns,
            brightness_kcps,
            fine_structure: FineStructure::default(),
        }
    }

    pub fn lifetime_limit_mhz(&self) -> f64 {
        1e3 / (2.0 * std::f64::consts::PI * self.lifetime_ns)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inhomogeneous_center_ghz", self.inhomogeneous_center_ghz),
            ("inhomogeneous_fwhm_ghz", self.inhomogeneous_fwhm_ghz),
            ("homogeneous_median_mhz", self.homogeneous_median_mhz),
            ("lifetime_ns", self.lifetime_ns),
            ("brightness_kcps", self.brightness_kcps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::domain(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.homogeneous_shape >= 0.0) {
            return Err(Error::domain("homogeneous_shape must be >= 0"));
        }
        lifetime_limited_linewidth_mhz(self.lifetime_ns)?;
        self.fine_structure.validate()
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!("yield must lie in [0, 1], got {eta}")));
    }
    Ok(())
}

/// Poisson(`n_ions`·η) emitter count.
pub fn sample_emitter_count(n_ions: u64, eta: f64, seed: &RandomSeed) -> Result<u64> {
    check_eta(eta)?;
    let lambda = n_ions as f64 * eta;
    if lambda == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(lambda).map_err(|e| Error::domain(e.to_string()))?;
    Ok(dist.sample(&mut seed.rng()) as u64)
}

/// Bernoulli activation of every ion. Each ion draws from its own child seed,
/// so for a fixed seed the emitters obtained at a higher η are a superset of
/// those at a lower η, with identical spectral properties.
pub fn sample_emitters(
    ion_positions: &[Point3D],
    eta: f64,
    pop: &SpectralPopulation,
    seed: &RandomSeed,
) -> Result<Vec<Emitter>> {
    check_eta(eta)?;
    pop.validate()?;
    if eta == 0.0 {
        return Ok(Vec::new());
    }
    let floor = pop.lifetime_limit_mhz();
    let inhom_sigma = sigma_from_fwhm(pop.inhomogeneous_fwhm_ghz);
    let ln_median = pop.homogeneous_median_mhz.ln();
    let out = ion_positions
        .iter()
        .enumerate()
        .filter_map(|(i, &position)| {
            let mut rng = seed.child(i as u64).rng();
            let u: f64 = rng.random();
            if u >= eta {
                return None;
            }
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            let homogeneous = (ln_median + pop.homogeneous_shape * z2).exp().max(floor);
            Some(Emitter {
                position,
                zpl_center_ghz: pop.inhomogeneous_center_ghz + inhom_sigma * z1,
                homogeneous_fwhm_mhz: homogeneous,
                brightness_kcps: pop.brightness_kcps,
            })
        })
        .collect();
    Ok(out)
}
