//! Worker-pool scaling of the data-parallel kernels. `sequential` pins the
//! pool to one thread; `parallel` uses every core. Build with
//! `--no-default-features` to measure the rayon-free fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use implantsim::activation::Emitter;
use implantsim::campaign::{run_array_campaign, run_cavity_campaign, CampaignConfig};
use implantsim::foundation::{Point2D, Point3D, RandomSeed};
use implantsim::imaging::{render_confocal, ImageGeometry, PsfSpec};
use implantsim::par;

const MODES: [(&str, Option<usize>); 2] = [("sequential", Some(1)), ("parallel", None)];

fn emitters(n: usize) -> Vec<Emitter> {
    (0..n)
        .map(|i| Emitter {
            position: Point3D::new((i % 20) as f64 * 1000.0, (i / 20) as f64 * 1000.0, 60.0),
            zpl_center_ghz: 406_774.0,
            homogeneous_fwhm_mhz: 200.0,
            brightness_kcps: 30.0,
        })
        .collect()
}

fn confocal(c: &mut Criterion) {
    let psf = PsfSpec::new(1.3, 737.0).unwrap();
    let g = ImageGeometry::covering(Point2D::new(-1000.0, -1000.0), Point2D::new(20_000.0, 20_000.0), 50.0, 1.0);
    let em = emitters(400);
    let mut group = c.benchmark_group("render_confocal_421x421");
    for (name, jobs) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_jobs(jobs, || render_confocal(black_box(&em), &psf, 1.0, &g, &RandomSeed::new(1)).unwrap()))
        });
    }
    group.finish();
}

fn array_campaign(c: &mut Criterion) {
    let cfg = CampaignConfig::default();
    let mut group = c.benchmark_group("array_campaign_14x14");
    group.sample_size(10);
    for (name, jobs) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::with_jobs(jobs, || run_array_campaign(black_box(&cfg), 3).unwrap()))
        });
    }
    group.finish();
}

fn cavity_campaign(c: &mut Criterion) {
    let mut cfg = CampaignConfig::default();
    cfg.cavities.count = 200;
    cfg.cavities.max_targeting_cubes = 20;
    let layouts = cfg.cavities.resolved_layouts().unwrap();
    let mut group = c.benchmark_group("cavity_campaign_200_20cubes");
    group.sample_size(10);
    for (name, jobs) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                par::with_jobs(jobs, || run_cavity_campaign(black_box(&layouts), cfg.cavities.ions_per_maximum, &cfg, 4).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, confocal, array_campaign, cavity_campaign);
criterion_main!(benches);
