//! Command-line front end: configuration, simulated campaigns, analysis of
//! measured or synthetic data, and report inspection.

mod analyze;
mod failure;
mod settings;
mod synth;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use implantsim::analysis::LineModel;
use implantsim::campaign::{
    load_manifest, load_report, persist_report, run_array_campaign, run_cavity_campaign, run_irradiation_comparison,
    run_protocol_campaign, run_sweep_campaign, CampaignConfig, CampaignReport, FitRow,
};
use implantsim::foundation::{Point2D, RandomSeed};
use implantsim::imaging::{G2Params, PleSpec, DEFAULT_RAMAN_WAVELENGTH_NM};
use implantsim::par;
use serde_json::{json, Map, Value};

use failure::{Failure, Outcome};

const UNITS: &str = "\
Units are part of every key name:
  _nm        nanometres (positions, widths, wavelengths)
  _kev       ion energy, keV
  _per_cm2   areal dose or fluence, cm^-2
  _pa        beam current, pA
  _ghz/_mhz  optical frequency or linewidth
  _ns, _ms, _s  time
  _kcps      count rate, 10^3 counts/s (kcps x ms = counts)
  _counts    detector counts
Keys without a suffix are dimensionless.

Configuration precedence: --set > --config file > built-in defaults.
Every global flag can also be given as an IMPLANTSIM_<FLAG> environment
variable, e.g. IMPLANTSIM_SEED=7; IMPLANTSIM_SET takes ';'-separated
assignments.";

#[derive(Parser)]
#[command(name = "implantsim", version, about = "Focused-ion-beam emitter creation: simulate, analyze, report", after_help = UNITS)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true, env = "IMPLANTSIM_CONFIG")]
    config: Option<PathBuf>,
    /// Root seed; overrides the config's `seed` and is recorded as the effective seed.
    #[arg(long, global = true, env = "IMPLANTSIM_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "IMPLANTSIM_OUT")]
    out: Option<PathBuf>,
    /// Worker threads for campaign operations (default: all cores).
    #[arg(long, global = true, env = "IMPLANTSIM_JOBS")]
    jobs: Option<usize>,
    /// Config override by dotted path, e.g. `--set array.pitch_nm=2140`. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE", env = "IMPLANTSIM_SET", value_delimiter = ';')]
    set: Vec<String>,
    /// Progress and timing on stderr.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Array,
    Cavity,
    Sweep,
    Irradiation,
    Protocol,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Array => "array",
            Kind::Cavity => "cavity",
            Kind::Sweep => "sweep",
            Kind::Irradiation => "irradiation",
            Kind::Protocol => "protocol",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated campaign and write report.json, CSV tables and manifest.json.
    Simulate { kind: Kind },
    /// Fit a data file and print the result as JSON.
    Analyze {
        #[command(subcommand)]
        input: AnalyzeInput,
    },
    /// Inspect a persisted report.
    Report {
        #[command(subcommand)]
        action: ReportAction,
    },
    /// Write a synthetic data file for `analyze`.
    Synth {
        #[command(subcommand)]
        output: SynthOutput,
    },
    /// Print the effective configuration.
    Config,
}

#[derive(Subcommand)]
enum AnalyzeInput {
    /// Localize emitters in a confocal scan (header + row,col,counts CSV).
    Image {
        file: PathBuf,
        /// PSF sigma when the file header does not carry one.
        #[arg(long)]
        psf_sigma_nm: Option<f64>,
    },
    /// Emitter-to-cavity offset from a spectral cube.
    Cube {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RAMAN_WAVELENGTH_NM)]
        raman_nm: f64,
        /// ZPL wavelength (default: the configured population centre).
        #[arg(long)]
        zpl_nm: Option<f64>,
    },
    /// Antibunching fit of a tau_ns,g2,sigma histogram.
    G2 { file: PathBuf },
    /// Line fit of a spectrum or PLE scan.
    Spectrum {
        file: PathBuf,
        #[arg(long, default_value = "lorentzian")]
        model: LineModel,
        /// Instrument resolution in the file's axis unit.
        #[arg(long, default_value_t = 0.0)]
        instrument_fwhm: f64,
    },
}

#[derive(Subcommand)]
enum ReportAction {
    /// Verify a report directory and print its summary.
    Show { dir: PathBuf },
}

#[derive(Subcommand)]
enum SynthOutput {
    /// g2 histogram (tau_ns,g2,sigma).
    G2 {
        file: PathBuf,
        #[arg(long, default_value_t = 0.80)]
        a: f64,
        #[arg(long, default_value_t = 0.18)]
        b: f64,
        #[arg(long, default_value_t = 1.5)]
        t1_ns: f64,
        #[arg(long, default_value_t = 12.0)]
        t2_ns: f64,
        #[arg(long, default_value_t = 60.0)]
        half_range_ns: f64,
        #[arg(long, default_value_t = 60)]
        bins_per_side: usize,
        #[arg(long, default_value_t = 2e5)]
        total_counts: f64,
        /// Write the noiseless model.
        #[arg(long)]
        noiseless: bool,
    },
    /// PLE scan (detuning_mhz,counts).
    Ple {
        file: PathBuf,
        #[arg(long, default_value_t = 126.0)]
        fwhm_mhz: f64,
        #[arg(long, default_value_t = 1.7)]
        lifetime_ns: f64,
        #[arg(long, default_value_t = 1000.0)]
        half_span_mhz: f64,
        #[arg(long, default_value_t = 401)]
        points: usize,
        #[arg(long, default_value_t = 1000.0)]
        peak_counts: f64,
        #[arg(long, default_value_t = 10.0)]
        background_counts: f64,
        #[arg(long)]
        noiseless: bool,
    },
    /// Confocal scan of the square field [0, field_nm]^2 with emitters at the given positions.
    Image {
        file: PathBuf,
        #[arg(long, default_value_t = 5000.0)]
        field_nm: f64,
        /// Emitter position `x_nm,y_nm`. Repeatable.
        #[arg(long = "emitter", value_name = "X_NM,Y_NM", allow_hyphen_values = true)]
        emitters: Vec<String>,
    },
    /// Spectral cube of an L3 cavity with one emitter offset from its central maximum.
    Cube {
        file: PathBuf,
        #[arg(long, default_value_t = 4.0, allow_hyphen_values = true)]
        offset_x_nm: f64,
        #[arg(long, default_value_t = 48.0, allow_hyphen_values = true)]
        offset_y_nm: f64,
    },
}

fn fits_json(rows: &[FitRow]) -> Value {
    let mut m = Map::new();
    for r in rows {
        let key = if r.unit == "1" || r.quantity.ends_with(&format!("_{}", r.unit)) {
            r.quantity.clone()
        } else {
            format!("{}_{}", r.quantity, r.unit)
        };
        if let Some(u) = r.uncertainty {
            m.insert(format!("{key}_err"), json!(u));
        }
        m.insert(key, json!(r.value));
    }
    Value::Object(m)
}

fn run_campaign(kind: Kind, cfg: &CampaignConfig, seed: u64) -> implantsim::Result<CampaignReport> {
    match kind {
        Kind::Array => run_array_campaign(cfg, seed),
        Kind::Sweep => run_sweep_campaign(&cfg.sweep.energies_kev, &cfg.sweep.doses_per_cm2, cfg, seed),
        Kind::Irradiation => run_irradiation_comparison(&cfg.spots.ions_per_spot, cfg, seed),
        Kind::Cavity => run_cavity_campaign(&cfg.cavities.resolved_layouts()?, cfg.cavities.ions_per_maximum, cfg, seed),
        Kind::Protocol => run_protocol_campaign(cfg, seed),
    }
}

fn simulate(cli: &Cli, kind: Kind) -> Outcome<Value> {
    let cfg = settings::load_config(cli.config.as_deref(), &cli.set)?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("implantsim-out").join(kind.name()));
    let t = Instant::now();
    let report = par::with_jobs(cli.jobs, || run_campaign(kind, &cfg, seed))?;
    if cli.verbose > 0 {
        eprintln!("{} campaign finished in {:.2} s", kind.name(), t.elapsed().as_secs_f64());
    }
    let manifest = persist_report(&report, &out)?;
    Ok(json!({
        "kind": manifest.kind,
        "out_dir": out.display().to_string(),
        "root_seed": manifest.root_seed,
        "config_digest": manifest.config_digest,
        "files": manifest.files.keys().collect::<Vec<_>>(),
        "fits": fits_json(&manifest.fits),
    }))
}

fn report_show(dir: &Path) -> Outcome<Value> {
    let shown = dir.display().to_string();
    let report = load_report(dir).map_err(|e| Failure::from_input(e, &shown))?;
    report.verify().map_err(|e| Failure::from_input(e, &shown))?;
    let manifest = load_manifest(dir).map_err(|e| Failure::from_input(e, &shown))?;
    Ok(json!({
        "dir": shown,
        "kind": report.outcome.kind(),
        "schema_version": report.schema_version,
        "tool_version": report.tool_version,
        "root_seed": report.root_seed,
        "config_digest": report.config_digest,
        "ion_stride": report.ion_stride,
        "wall_model": report.wall_model,
        "files": manifest.files,
        "fits": fits_json(&report.fits()),
    }))
}

fn parse_point(s: &str) -> Outcome<Point2D> {
    let bad = || Failure::input(format!("emitter `{s}` is not `x_nm,y_nm`"), None);
    let (x, y) = s.split_once(',').ok_or_else(bad)?;
    Ok(Point2D::new(x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
}

fn synthesize(cli: &Cli, what: &SynthOutput) -> Outcome<Value> {
    let cfg = settings::load_config(cli.config.as_deref(), &cli.set)?;
    let seed = RandomSeed::new(cli.seed.unwrap_or(cfg.seed)).stream("synth");
    match what {
        SynthOutput::G2 {
            file,
            a,
            b,
            t1_ns,
            t2_ns,
            half_range_ns,
            bins_per_side,
            total_counts,
            noiseless,
        } => {
            let args = synth::G2Args {
                params: G2Params {
                    a: *a,
                    b: *b,
                    t1_ns: *t1_ns,
                    t2_ns: *t2_ns,
                },
                half_range_ns: *half_range_ns,
                bins_per_side: *bins_per_side,
                total_counts: *total_counts,
            };
            synth::g2(file, &args, (!noiseless).then_some(&seed))
        }
        SynthOutput::Ple {
            file,
            fwhm_mhz,
            lifetime_ns,
            half_span_mhz,
            points,
            peak_counts,
            background_counts,
            noiseless,
        } => {
            let spec = PleSpec {
                center_mhz: 0.0,
                fwhm_mhz: *fwhm_mhz,
                start_mhz: -half_span_mhz,
                stop_mhz: *half_span_mhz,
                points: *points,
                peak_counts: *peak_counts,
                background_counts: *background_counts,
                lifetime_ns: *lifetime_ns,
            };
            synth::ple(file, &spec, (!noiseless).then_some(&seed))
        }
        SynthOutput::Image { file, field_nm, emitters } => {
            let pts = emitters.iter().map(|s| parse_point(s)).collect::<Outcome<Vec<_>>>()?;
            synth::image(file, &cfg, *field_nm, &pts, &seed)
        }
        SynthOutput::Cube {
            file,
            offset_x_nm,
            offset_y_nm,
        } => synth::cube(file, &cfg, Point2D::new(*offset_x_nm, *offset_y_nm), &seed),
    }
}

fn analysis(cli: &Cli, input: &AnalyzeInput) -> Outcome<Value> {
    let cfg = settings::load_config(cli.config.as_deref(), &cli.set)?;
    let (name, value) = match input {
        AnalyzeInput::Image { file, psf_sigma_nm } => ("image", analyze::image(file, &cfg, *psf_sigma_nm)?),
        AnalyzeInput::Cube { file, raman_nm, zpl_nm } => (
            "cube",
            analyze::cube(file, &cfg, *raman_nm, zpl_nm.unwrap_or_else(|| cfg.emission_wavelength_nm()))?,
        ),
        AnalyzeInput::G2 { file } => ("g2", analyze::g2(file)?),
        AnalyzeInput::Spectrum {
            file,
            model,
            instrument_fwhm,
        } => ("spectrum", analyze::spectrum(file, *model, *instrument_fwhm)?),
    };
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
        let path = dir.join(format!("analysis_{name}.json"));
        let text = serde_json::to_string_pretty(&value).map_err(|e| Failure::runtime(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(value)
}

fn dispatch(cli: &Cli) -> Outcome<Value> {
    match &cli.command {
        Command::Simulate { kind } => simulate(cli, *kind),
        Command::Analyze { input } => analysis(cli, input),
        Command::Report {
            action: ReportAction::Show { dir },
        } => report_show(dir),
        Command::Synth { output } => synthesize(cli, output),
        Command::Config => {
            let cfg = settings::load_config(cli.config.as_deref(), &cli.set)?;
            serde_json::to_value(&cfg).map_err(|e| Failure::runtime(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(v) => {
            let text = serde_json::to_string_pretty(&v).expect("serializable");
            // A closed pipe (e.g. `| head`) is not an error of the command.
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code as u8)
        }
    }
}
