use std::path::Path;

use implantsim::analysis::{
    estimate_targeting, filter_single_sites, fit_g2, fit_line, localize_sites, Estimate, LineModel,
};
use implantsim::campaign::CampaignConfig;
use implantsim::imaging::io::{load_cube, load_g2, load_image, load_spectrum};
use implantsim::imaging::AxisUnit;
use serde_json::{json, Value};

use crate::failure::{Failure, Outcome};

fn shown(p: &Path) -> String {
    p.display().to_string()
}

fn estimate(name: &str, e: &Estimate, out: &mut serde_json::Map<String, Value>) {
    out.insert(name.to_string(), json!(e.value));
    out.insert(format!("{name}_err"), json!(e.std_err));
    out.insert(format!("{name}_ci95"), json!([e.ci95_low, e.ci95_high]));
}

pub fn image(file: &Path, cfg: &CampaignConfig, psf_sigma_nm: Option<f64>) -> Outcome<Value> {
    let image = load_image(file).map_err(|e| Failure::from_input(e, &shown(file)))?;
    let mut opts = cfg.imaging.localize;
    if psf_sigma_nm.is_some() {
        opts.psf_sigma_nm = psf_sigma_nm;
    }
    let found = localize_sites(&image, &opts)?;
    let singles = filter_single_sites(&found.sites, cfg.imaging.single_reference_counts)?;
    let sites: Vec<Value> = found
        .sites
        .iter()
        .map(|s| {
            json!({
                "x_nm": s.position.x,
                "y_nm": s.position.y,
                "err_x_nm": s.err_x_nm,
                "err_y_nm": s.err_y_nm,
                "peak_counts": s.peak_counts,
                "width_sigma_nm": s.width_sigma_nm,
                "background_counts": s.background_counts,
                "single": singles.contains(s),
            })
        })
        .collect();
    Ok(json!({
        "input": shown(file),
        "candidates": found.candidates,
        "dropped": found.dropped,
        "single_sites": singles.len(),
        "sites": sites,
    }))
}

pub fn cube(file: &Path, cfg: &CampaignConfig, raman_nm: f64, zpl_nm: f64) -> Outcome<Value> {
    let cube = load_cube(file).map_err(|e| Failure::from_input(e, &shown(file)))?;
    let r = estimate_targeting(&cube, raman_nm, zpl_nm, &cfg.cavities.cube.targeting)?;
    Ok(json!({
        "input": shown(file),
        "raman_nm": raman_nm,
        "zpl_nm": zpl_nm,
        "raman_x_nm": r.raman.position.x,
        "raman_y_nm": r.raman.position.y,
        "raman_err_x_nm": r.raman.var_x_nm2.sqrt(),
        "raman_err_y_nm": r.raman.var_y_nm2.sqrt(),
        "zpl_x_nm": r.zpl.position.x,
        "zpl_y_nm": r.zpl.position.y,
        "zpl_err_x_nm": r.zpl.var_x_nm2.sqrt(),
        "zpl_err_y_nm": r.zpl.var_y_nm2.sqrt(),
        "offset_x_nm": r.offset.x,
        "offset_y_nm": r.offset.y,
        "distance_nm": r.distance_nm,
        "distance_err_nm": r.distance_err_nm,
    }))
}

pub fn g2(file: &Path) -> Outcome<Value> {
    let h = load_g2(file).map_err(|e| Failure::from_input(e, &shown(file)))?;
    let f = fit_g2(&h)?;
    let mut out = serde_json::Map::new();
    out.insert("input".into(), json!(shown(file)));
    estimate("g2_zero", &f.g2_zero, &mut out);
    out.insert("is_single".into(), json!(f.is_single));
    estimate("a", &f.a, &mut out);
    estimate("b", &f.b, &mut out);
    estimate("t1_ns", &f.t1_ns, &mut out);
    estimate("t2_ns", &f.t2_ns, &mut out);
    out.insert("ci_reliable".into(), json!(f.ci_reliable));
    out.insert("reduced_chi2".into(), json!(f.reduced_chi2));
    Ok(Value::Object(out))
}

pub fn spectrum(file: &Path, model: LineModel, instrument_fwhm: f64) -> Outcome<Value> {
    let s = load_spectrum(file).map_err(|e| Failure::from_input(e, &shown(file)))?;
    let f = fit_line(&s, model, instrument_fwhm)?;
    let unit = match s.unit {
        AxisUnit::FrequencyGhz => "ghz",
        AxisUnit::DetuningMhz => "mhz",
        AxisUnit::WavelengthNm => "nm",
    };
    let mut out = serde_json::Map::new();
    out.insert("input".into(), json!(shown(file)));
    out.insert("model".into(), json!(model));
    out.insert(format!("center_{unit}"), json!(f.center));
    out.insert(format!("center_err_{unit}"), json!(f.center_err));
    out.insert(format!("fwhm_{unit}"), json!(f.fwhm));
    out.insert(format!("fwhm_err_{unit}"), json!(f.fwhm_err));
    out.insert(format!("instrument_fwhm_{unit}"), json!(f.instrument_fwhm));
    out.insert("amplitude_counts".into(), json!(f.amplitude));
    out.insert("offset_counts".into(), json!(f.offset));
    out.insert("instrument_limited".into(), json!(f.instrument_limited));
    Ok(Value::Object(out))
}
