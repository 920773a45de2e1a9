use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{expected_lateral_sigma, BeamSpec, StraggleTable};
use crate::error::Result;
use crate::foundation::{Point2D, Point3D, RandomSeed, SimRng};

/// One counted-pulse exposure at a single target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImplantShot {
    pub target: Point2D,
    pub requested_ions: u64,
    pub energy_kev: f64,
}

#[inline]
fn normal(rng: &mut SimRng, mean: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        mean
    } else {
        let z: f64 = StandardNormal.sample(rng);
        mean + sigma * z
    }
}

/// Depth below the surface; ions that would land above it are redrawn.
#[inline]
fn depth(rng: &mut SimRng, mean: f64, sigma: f64) -> f64 {
    loop {
        let z = normal(rng, mean, sigma);
        if z >= 0.0 {
            return z;
        }
    }
}

/// Landing sites of the ions of one shot: isotropic lateral Gaussian with the
/// beam and straggle σ in quadrature, Gaussian depth. Deterministic per seed.
pub fn sample_ion_positions(
    shot: &ImplantShot,
    beam: &BeamSpec,
    table: &StraggleTable,
    seed: &RandomSeed,
) -> Result<Vec<Point3D>> {
    let straggle = table.lookup(shot.energy_kev)?;
    let sigma = expected_lateral_sigma(beam, straggle.lateral_sigma_nm);
    let mut rng = seed.rng();
    let mut aim = shot.target;
    if beam.pointing_sigma_nm > 0.0 {
        aim.x = normal(&mut rng, aim.x, beam.pointing_sigma_nm);
        aim.y = normal(&mut rng, aim.y, beam.pointing_sigma_nm);
    }
    let positions = (0..shot.requested_ions)
        .map(|_| {
            let x = normal(&mut rng, aim.x, sigma);
            let y = normal(&mut rng, aim.y, sigma);
            let z = depth(&mut rng, straggle.depth_mean_nm, straggle.depth_sigma_nm);
            Point3D::new(x, y, z)
        })
        .collect();
    Ok(positions)
}

/// Uniform raster exposure of a square region (side in nm, centred on
/// `center`) with `n_ions` ions, each then blurred by beam and straggle.
pub fn sample_area_exposure(
    center: Point2D,
    side_nm: f64,
    n_ions: u64,
    energy_kev: f64,
    beam: &BeamSpec,
    table: &StraggleTable,
    seed: &RandomSeed,
) -> Result<Vec<Point3D>> {
    let straggle = table.lookup(energy_kev)?;
    let sigma = expected_lateral_sigma(beam, straggle.lateral_sigma_nm);
    let mut rng = seed.rng();
    let half = side_nm / 2.0;
    Ok((0..n_ions)
        .map(|_| {
            let ux: f64 = rng.random_range(-half..=half);
            let uy: f64 = rng.random_range(-half..=half);
            let x = normal(&mut rng, center.x + ux, sigma);
            let y = normal(&mut rng, center.y + uy, sigma);
            let z = depth(&mut rng, straggle.depth_mean_nm, straggle.depth_sigma_nm);
            Point3D::new(x, y, z)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::implantation::StraggleEntry;

    fn flat_table(lateral: f64, depth: f64, depth_sigma: f64) -> StraggleTable {
        StraggleTable::new(vec![
            StraggleEntry {
                energy_kev: 10.0,
                lateral_sigma_nm: lateral,
                depth_mean_nm: depth,
                depth_sigma_nm: depth_sigma,
            },
            StraggleEntry {
                energy_kev: 200.0,
                lateral_sigma_nm: lateral,
                depth_mean_nm: depth,
                depth_sigma_nm: depth_sigma,
            },
        ])
        .unwrap()
    }

    fn shot(n: u64) -> ImplantShot {
        ImplantShot {
            target: Point2D::new(100.0, 200.0),
            requested_ions: n,
            energy_kev: 100.0,
        }
    }

    #[test]
    fn zero_spread_lands_on_target() {
        let beam = BeamSpec {
            fwhm_nm: 0.0,
            ..BeamSpec::default()
        };
        let pts =
            sample_ion_positions(&shot(5), &beam, &flat_table(0.0, 73.0, 0.0), &RandomSeed::new(1))
                .unwrap();
        assert_eq!(pts, vec![Point3D::new(100.0, 200.0, 73.0); 5]);
    }

    #[test]
    fn out_of_range_energy() {
        let s = ImplantShot {
            energy_kev: 5.0,
            ..shot(1)
        };
        let err = sample_ion_positions(&s, &BeamSpec::default(), &StraggleTable::default(), &RandomSeed::new(0));
        assert!(matches!(err, Err(Error::OutOfRange { min, max, .. }) if min == 10.0 && max == 200.0));
    }

    #[test]
    fn deterministic() {
        let t = StraggleTable::default();
        let b = BeamSpec::default();
        let a = sample_ion_positions(&shot(100), &b, &t, &RandomSeed::new(9)).unwrap();
        let c = sample_ion_positions(&shot(100), &b, &t, &RandomSeed::new(9)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn moments_match_quadrature() {
        let n = 100_000;
        let pts = sample_ion_positions(
            &shot(n),
            &BeamSpec::default(),
            &flat_table(19.0, 70.0, 20.0),
            &RandomSeed::new(42),
        )
        .unwrap();
        let nf = n as f64;
        let mx = pts.iter().map(|p| p.x).sum::<f64>() / nf;
        let my = pts.iter().map(|p| p.y).sum::<f64>() / nf;
        let sx = (pts.iter().map(|p| (p.x - mx).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        let sy = (pts.iter().map(|p| (p.y - my).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
        assert!((mx - 100.0).abs() < 0.3 && (my - 200.0).abs() < 0.3, "{mx} {my}");
        assert!((24.7..=26.3).contains(&sx), "{sx}");
        assert!((24.7..=26.3).contains(&sy), "{sy}");
    }

    #[test]
    fn radial_distance_is_rayleigh() {
        let n = 100_000;
        let pts = sample_ion_positions(
            &shot(n),
            &BeamSpec::default(),
            &flat_table(19.0, 70.0, 20.0),
            &RandomSeed::new(5),
        )
        .unwrap();
        let sigma = expected_lateral_sigma(&BeamSpec::default(), 19.0);
        let mut r: Vec<f64> = pts
            .iter()
            .map(|p| p.lateral().distance(Point2D::new(100.0, 200.0)))
            .collect();
        r.sort_by(f64::total_cmp);
        let nf = n as f64;
        let ks = r
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = 1.0 - (-x * x / (2.0 * sigma * sigma)).exp();
                (cdf - i as f64 / nf).abs().max(((i + 1) as f64 / nf - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS = {ks}");
    }

    #[test]
    fn pointing_error_moves_whole_shot() {
        let beam = BeamSpec {
            fwhm_nm: 0.0,
            pointing_sigma_nm: 30.0,
            ..BeamSpec::default()
        };
        let pts =
            sample_ion_positions(&shot(4), &beam, &flat_table(0.0, 50.0, 0.0), &RandomSeed::new(3))
                .unwrap();
        assert!(pts.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(pts[0].lateral(), Point2D::new(100.0, 200.0));
    }

    #[test]
    fn depth_never_negative() {
        let pts = sample_ion_positions(
            &shot(10_000),
            &BeamSpec::default(),
            &flat_table(5.0, 5.0, 10.0),
            &RandomSeed::new(8),
        )
        .unwrap();
        assert!(pts.iter().all(|p| p.z >= 0.0));
    }
}
