use std::path::Path;

use implantsim::activation::Emitter;
use implantsim::campaign::CampaignConfig;
use implantsim::foundation::{Point2D, Point3D, RandomSeed};
use implantsim::imaging::io::{save_cube, save_g2, save_image, save_spectrum};
use implantsim::imaging::{
    render_confocal, render_spectral_cube, symmetric_delays, synth_g2, synth_ple, CavityLayout, G2Params,
    ImageGeometry, PleSpec,
};
use serde_json::{json, Value};

use crate::failure::Outcome;

/// Depth given to synthetic emitters; only the lateral position is imaged.
const SYNTH_DEPTH_NM: f64 = 60.0;

fn emitter(cfg: &CampaignConfig, p: Point2D) -> Emitter {
    Emitter {
        position: Point3D::new(p.x, p.y, SYNTH_DEPTH_NM),
        zpl_center_ghz: cfg.population.inhomogeneous_center_ghz,
        homogeneous_fwhm_mhz: cfg.population.lifetime_limit_mhz(),
        brightness_kcps: cfg.population.brightness_kcps,
    }
}

pub struct G2Args {
    pub params: G2Params,
    pub half_range_ns: f64,
    pub bins_per_side: usize,
    pub total_counts: f64,
}

pub fn g2(out: &Path, a: &G2Args, seed: Option<&RandomSeed>) -> Outcome<Value> {
    let h = synth_g2(&a.params, &symmetric_delays(a.half_range_ns, a.bins_per_side), a.total_counts, seed)?;
    save_g2(&h, out)?;
    Ok(json!({ "output": out.display().to_string(), "bins": h.len(), "g2_zero": a.params.g2_zero() }))
}

pub fn ple(out: &Path, spec: &PleSpec, seed: Option<&RandomSeed>) -> Outcome<Value> {
    let s = synth_ple(spec, seed)?;
    save_spectrum(&s, out)?;
    Ok(json!({ "output": out.display().to_string(), "points": s.x.len(), "fwhm_mhz": spec.fwhm_mhz }))
}

pub fn image(out: &Path, cfg: &CampaignConfig, field_nm: f64, emitters: &[Point2D], seed: &RandomSeed) -> Outcome<Value> {
    let im = &cfg.imaging;
    let g = ImageGeometry::covering(Point2D::ORIGIN, Point2D::new(field_nm, field_nm), im.pixel_pitch_nm, im.dwell_ms);
    let em: Vec<Emitter> = emitters.iter().map(|&p| emitter(cfg, p)).collect();
    let image = render_confocal(&em, &im.psf()?, im.background_kcps, &g, seed)?;
    save_image(&image, out)?;
    Ok(json!({
        "output": out.display().to_string(),
        "width": g.width,
        "height": g.height,
        "emitters": emitters.len(),
        "total_counts": image.total(),
    }))
}

pub fn cube(out: &Path, cfg: &CampaignConfig, offset: Point2D, seed: &RandomSeed) -> Outcome<Value> {
    let plan = &cfg.cavities;
    let layout = CavityLayout::l3(Point2D::ORIGIN, plan.lattice_constant_nm, plan.hole_radius_nm)?;
    let emission = cfg.emission_wavelength_nm();
    let spec = plan.cube.spec(layout.center, emission)?;
    let pos = layout.maximum(1) + offset;
    let cube = render_spectral_cube(&[emitter(cfg, pos)], &layout, &spec, seed)?;
    save_cube(&cube, out)?;
    Ok(json!({
        "output": out.display().to_string(),
        "raman_nm": layout.raman_wavelength_nm,
        "zpl_nm": emission,
        "offset_x_nm": offset.x,
        "offset_y_nm": offset.y,
    }))
}
