
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::foundation::{AffineTransform2D, Point2D};

/// Affine lattice registration of a set of sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFit {
    pub pitch_nm: f64,
    /// Maps nominal lattice coordinates (i·pitch, j·pitch) to the sample.
    pub transform: AffineTransform2D,
    /// Lattice index (i, j) of every site, smallest index 0 on each axis.
    pub indices: Vec<(i64, i64)>,
    /// Site minus transformed lattice point.
    pub displacements: Vec<Point2D>,
    pub mean_displacement: Point2D,
    /// Per-axis sample standard deviation of the displacements.
    pub std_displacement: Point2D,
    pub iterations: usize,
}

impl GridFit {
    pub fn lattice_point(&self, index: (i64, i64)) -> Point2D {
        self.transform.apply(Point2D::new(
            index.0 as f64 * self.pitch_nm,
            index.1 as f64 * self.pitch_nm,
        ))
    }

    /// Radial displacement of every site.
    pub fn distances(&self) -> Vec<f64> {
        self.displacements.iter().map(|d| d.norm()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub max_iterations: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { max_iterations: 50 }
    }
}

/// Nearest integer, exact halves going to the lower index.
fn round_half_down(u: f64) -> i64 {
    (u - 0.5).ceil() as i64
}

fn assign(sites: &[Point2D], t: &AffineTransform2D, pitch: f64) -> Result<Vec<(i64, i64)>> {
    let inv = t.inverse()?;
    Ok(sites
        .iter()
        .map(|&s| {
            let q = inv.apply(s);
            (round_half_down(q.x / pitch), round_half_down(q.y / pitch))
        })
        .collect())
}

/// Least-squares affine map from lattice points to sites.
fn solve_affine(
    sites: &[Point2D],
    indices: &[(i64, i64)],
    pitch: f64,
) -> Result<AffineTransform2D> {
    let n = sites.len();
    let lat: Vec<Point2D> = indices
        .iter()
        .map(|&(i, j)| Point2D::new(i as f64 * pitch, j as f64 * pitch))
        .collect();
    let mean = |v: &[Point2D]| {
        let s = v.iter().fold(Point2D::ORIGIN, |a, &b| a + b);
        s * (1.0 / v.len() as f64)
    };
    let lc = mean(&lat);
    let sc = mean(sites);
    let x = DMatrix::from_fn(n, 2, |r, c| {
        let d = lat[r] - lc;
        if c == 0 {
            d.x
        } else {
            d.y
        }
    });
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-9 || smax == 0.0 {
        return Err(Error::domain(
            "assigned lattice points are collinear; affine fit is underdetermined",
        ));
    }
    let mut linear = [[0.0; 2]; 2];
    for (row, coord) in linear.iter_mut().zip([0usize, 1]) {
        let y = DVector::from_iterator(
            n,
            sites.iter().map(|s| {
                let d = *s - sc;
                if coord == 0 {
                    d.x
                } else {
                    d.y
                }
            }),
        );
        let sol = svd
            .solve(&y, 1e-12)
            .map_err(|e| Error::domain(e.to_string()))?;
        *row = [sol[0], sol[1]];
    }
    let lin_only = AffineTransform2D::new(linear, Point2D::ORIGIN)?;
    let translation = sc - lin_only.apply_linear(lc);
    AffineTransform2D::new(linear, translation)
}

fn build(
    sites: &[Point2D],
    indices: Vec<(i64, i64)>,
    transform: AffineTransform2D,
    pitch: f64,
    iterations: usize,
) -> GridFit {
    let mut fit = GridFit {
        pitch_nm: pitch,
        transform,
        indices,
        displacements: Vec::new(),
        mean_displacement: Point2D::ORIGIN,
        std_displacement: Point2D::ORIGIN,
        iterations,
    };
    fit.displacements = sites
        .iter()
        .zip(&fit.indices)
        .map(|(&s, &ix)| s - fit.lattice_point(ix))
        .collect();
    let n = sites.len() as f64;
    let m = fit
        .displacements
        .iter()
        .fold(Point2D::ORIGIN, |a, &b| a + b)
        * (1.0 / n);
    let var = fit.displacements.iter().fold(Point2D::ORIGIN, |a, &d| {
        a + Point2D::new((d.x - m.x).powi(2), (d.y - m.y).powi(2))
    }) * (1.0 / (n - 1.0).max(1.0));
    fit.mean_displacement = m;
    fit.std_displacement = Point2D::new(var.x.sqrt(), var.y.sqrt());
    fit
}

/// Moves the smallest lattice index on each axis to 0, absorbing the shift
/// into the translation.
fn canonicalize(mut indices: Vec<(i64, i64)>, t: AffineTransform2D, pitch: f64) -> (Vec<(i64, i64)>, AffineTransform2D) {
    let imin = indices.iter().map(|ix| ix.0).min().unwrap_or(0);
    let jmin = indices.iter().map(|ix| ix.1).min().unwrap_or(0);
    for ix in indices.iter_mut() {
        ix.0 -= imin;
        ix.1 -= jmin;
    }
    let shift = t.apply_linear(Point2D::new(imin as f64 * pitch, jmin as f64 * pitch));
    let t2 = AffineTransform2D {
        linear: t.linear,
        translation: t.translation + shift,
    };
    (indices, t2)
}

/// Fits a lattice of nominal pitch, allowing an arbitrary affine distortion,
/// by alternating nearest-lattice assignment and least-squares refits until
/// the assignment is stable. The active set starts with the neighbourhood of
/// the most central site and grows until it covers every site, which keeps
/// the assignment correct under sizeable scale or shear distortions.
pub fn fit_affine_grid(sites: &[Point2D], nominal_pitch_nm: f64, opts: &GridOptions) -> Result<GridFit> {
    if !(nominal_pitch_nm > 0.0) {
        return Err(Error::domain("nominal pitch must be > 0"));
    }
    if sites.len() < 6 {
        return Err(Error::domain(format!(
            "affine grid fit needs at least 6 sites, got {}",
            sites.len()
        )));
    }
    if sites.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain("site coordinates must be finite"));
    }
    let p = nominal_pitch_nm;
    let centroid = sites.iter().fold(Point2D::ORIGIN, |a, &b| a + b) * (1.0 / sites.len() as f64);
    let hub = sites
        .iter()
        .min_by(|a, b| a.distance(centroid).total_cmp(&b.distance(centroid)))
        .copied()
        .unwrap_or(centroid);
    let reach = sites.iter().map(|s| s.distance(hub)).fold(0.0, f64::max);
    // The central site anchors the lattice origin; a global phase estimate
    // would be meaningless once the distortion accumulates across the field.
    let mut transform = AffineTransform2D::translation(hub);
    let mut radius = 2.5 * p;
    let mut iterations = 0;
    loop {
        let full = radius >= reach;
        let active: Vec<Point2D> = if full {
            sites.to_vec()
        } else {
            sites.iter().copied().filter(|s| s.distance(hub) <= radius).collect()
        };
        let mut indices = assign(&active, &transform, p)?;
        let mut stable = false;
        while iterations < opts.max_iterations {
            iterations += 1;
            transform = match solve_affine(&active, &indices, p) {
                Ok(t) => t,
                Err(e) if full => return Err(e),
                Err(_) => break,
            };
            let next = assign(&active, &transform, p)?;
            if next == indices {
                stable = true;
                break;
            }
            indices = next;
        }
        if full {
            let (ix, t) = canonicalize(indices, transform, p);
            let fit = build(sites, ix, t, p, iterations);
            if stable {
                return Ok(fit);
            }
            return Err(Error::GridNotConverged {
                iterations,
                last: Box::new(fit),
            });
        }
        radius *= 1.6;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn lattice(n: i64, pitch: f64) -> Vec<Point2D> {
        (0..n)
            .flat_map(|j| (0..n).map(move |i| Point2D::new(i as f64 * pitch, j as f64 * pitch)))
            .collect()
    }

    #[test]
    fn exact_grid() {
        let sites = lattice(5, 2140.0);
        let fit = fit_affine_grid(&sites, 2140.0, &GridOptions::default()).unwrap();
        let id = AffineTransform2D::IDENTITY;
        for r in 0..2 {
            for c in 0..2 {
                assert!((fit.transform.linear[r][c] - id.linear[r][c]).abs() < 1e-12);
            }
        }
        assert!(fit.transform.translation.norm() < 1e-9);
        assert!(fit.displacements.iter().all(|d| d.norm() < 1e-9));
    }

    #[test]
    fn recovers_known_affine() {
        let warp = AffineTransform2D::new([[1.01, -0.012], [0.008, 0.995]], Point2D::new(350.0, -770.0))
            .unwrap();
        let sites: Vec<Point2D> = lattice(8, 2140.0).into_iter().map(|p| warp.apply(p)).collect();
        let fit = fit_affine_grid(&sites, 2140.0, &GridOptions::default()).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let rel = (fit.transform.linear[r][c] - warp.linear[r][c]).abs() / warp.linear[r][c].abs();
                assert!(rel < 1e-6, "{r}{c}");
            }
        }
        assert!((fit.transform.translation - warp.translation).norm() < 1e-6 * 2140.0);
    }

    #[test]
    fn noisy_grid_displacement_std() {
        let mut rng = crate::foundation::RandomSeed::new(77).rng();
        let noise = Normal::new(0.0, 26.0).unwrap();
        let sites: Vec<Point2D> = lattice(14, 2140.0)
            .into_iter()
            .map(|p| p + Point2D::new(noise.sample(&mut rng), noise.sample(&mut rng)))
            .collect();
        let fit = fit_affine_grid(&sites, 2140.0, &GridOptions::default()).unwrap();
        let s = fit.std_displacement;
        assert!((22.0..=30.0).contains(&s.x) && (22.0..=30.0).contains(&s.y), "{s:?}");
        assert!(fit.mean_displacement.norm() < 1e-6);
    }

    #[test]
    fn too_few_or_collinear() {
        let line: Vec<Point2D> = (0..8).map(|i| Point2D::new(i as f64 * 2140.0, 0.0)).collect();
        assert!(fit_affine_grid(&line, 2140.0, &GridOptions::default()).is_err());
        assert!(fit_affine_grid(&line[..5], 2140.0, &GridOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap() {
        let warp = AffineTransform2D::new([[1.15, 0.05], [-0.04, 0.9]], Point2D::ORIGIN).unwrap();
        let sites: Vec<Point2D> = lattice(14, 1000.0).into_iter().map(|p| warp.apply(p)).collect();
        let ok = fit_affine_grid(&sites, 1000.0, &GridOptions::default()).unwrap();
        assert!(ok.displacements.iter().all(|d| d.norm() < 1e-6));
        assert!(ok.iterations >= 2);
        let cap = GridOptions { max_iterations: ok.iterations - 1 };
        match fit_affine_grid(&sites, 1000.0, &cap) {
            Err(Error::GridNotConverged { iterations, last }) => {
                assert_eq!(iterations, cap.max_iterations);
                assert_eq!(last.indices.len(), sites.len());
            }
            other => panic!("{other:?}"),
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn translation_only_moves_the_translation(vx in -5000.0f64..5000.0, vy in -5000.0f64..5000.0, seed in 0u64..1000) {
            let mut rng = crate::foundation::RandomSeed::new(seed).rng();
            let noise = Normal::new(0.0, 30.0).unwrap();
            let sites: Vec<Point2D> = lattice(6, 2140.0)
                .into_iter()
                .map(|p| p + Point2D::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let v = Point2D::new(vx, vy);
            let moved: Vec<Point2D> = sites.iter().map(|&s| s + v).collect();
            let a = fit_affine_grid(&sites, 2140.0, &GridOptions::default()).unwrap();
            let b = fit_affine_grid(&moved, 2140.0, &GridOptions::default()).unwrap();
            for (da, db) in a.displacements.iter().zip(&b.displacements) {
                proptest::prop_assert!((*da - *db).norm() < 1e-9);
            }
            proptest::prop_assert!((b.transform.translation - a.transform.translation - v).norm() < 1e-8);
        }
    }
}
