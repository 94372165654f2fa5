use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use anderloc_core::intensity::{
    bin_edges, default_positions, fluctuation_histograms, FluctuationKind, FluctuationReport, FluctuationSettings,
    HistogramAccumulator, DEFAULT_POSITION_STEP_UM,
};
use anderloc_core::io::fmt_f64;
use anderloc_core::{EnsembleSpec, StackSpec};

use super::infer::MapReport;
use super::{default_stack, load_calibration, read_text, require, StackFlags};
use crate::config::resolve;
use crate::output::OutDir;
use crate::{usage, CliResult};

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    #[command(flatten)]
    pub stack: StackFlags,
    /// MAP file from `infer`; sets the length, disorder and loss of the stack.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Calibration used to turn the MAP ξ into Δn; nominal laws if omitted.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Built-in ensemble: `strong` or `weak` disorder.
    #[arg(long, value_parser = ["strong", "weak"])]
    pub preset: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub realizations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_min_nm: Option<f64>,
    #[arg(long)]
    pub lambda_max_nm: Option<f64>,
    #[arg(long)]
    pub wavelength_points: Option<usize>,
    #[arg(long)]
    pub position_step_um: Option<f64>,
    /// Also write log-log SVG plots.
    #[arg(long)]
    pub svg: Option<bool>,
    /// Pool a spatially and spectrally constant field instead of solving.
    #[arg(long)]
    pub constant_field: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub stack: StackSpec,
    pub map: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub preset: Option<String>,
    pub realizations: usize,
    pub seed: u64,
    pub lambda_min_nm: f64,
    pub lambda_max_nm: f64,
    pub wavelength_points: usize,
    pub position_step_um: f64,
    pub svg: bool,
    pub constant_field: bool,
}

impl Default for Config {
    fn default() -> Self {
        let s = FluctuationSettings::default();
        Self {
            stack: default_stack(),
            map: None,
            calibration: None,
            preset: None,
            realizations: 8,
            seed: 1,
            lambda_min_nm: s.lambda_range_nm.0,
            lambda_max_nm: s.lambda_range_nm.1,
            wavelength_points: s.wavelength_points,
            position_step_um: DEFAULT_POSITION_STEP_UM,
            svg: false,
            constant_field: false,
        }
    }
}

/// Built-in 30 µm ensembles with `ξ/L` near 0.08 (strong) and near 0.9 (weak).
pub fn preset_stack(name: &str) -> CliResult<StackSpec> {
    let dn = match name {
        "strong" => 1.7,
        "weak" => 0.5,
        other => return Err(usage(format!("unknown preset `{other}`"))),
    };
    Ok(StackSpec::default().with_sample_length(30.0).with_delta_n(dn))
}

fn stack_from_map(path: &Path, cal_path: Option<&PathBuf>) -> CliResult<StackSpec> {
    let report: MapReport = serde_json::from_str(&read_text(path)?)?;
    let cal = load_calibration(cal_path)?;
    // ξ depends on Δn only, so the law is evaluated at the calibration length
    let dn = cal.delta_n(report.map.xi_um / cal.sample_length_um());
    let loss = report.map.loss.length_um();
    Ok(StackSpec {
        sample_length_um: report.sample_length_um,
        delta_n: dn,
        loss_length_um: Some(loss),
        ..cal.reference.clone()
    })
}

fn constant_report(cfg: &Config, positions: usize) -> CliResult<FluctuationReport> {
    let edges = bin_edges();
    let mut acc_i = HistogramAccumulator::new(FluctuationKind::Intensity);
    let mut acc_l = HistogramAccumulator::new(FluctuationKind::Ldos);
    let row = vec![1.0; cfg.wavelength_points];
    for _ in 0..cfg.realizations * positions {
        acc_i.add_spectrum(&edges, &row)?;
        acc_l.add_spectrum(&edges, &row)?;
    }
    Ok(FluctuationReport {
        intensity: acc_i.finish()?,
        ldos: acc_l.finish()?,
    })
}

pub fn run(flags: &Flags, file: Option<&Path>, out: &Path) -> CliResult<()> {
    let mut cfg: Config = resolve("intensity", file, flags)?;
    require(cfg.realizations >= 1, "realizations must be >= 1")?;
    require(cfg.wavelength_points >= 2, "wavelength_points must be >= 2")?;
    require(
        !(cfg.map.is_some() && cfg.preset.is_some()),
        "--map and --preset are mutually exclusive",
    )?;
    if let Some(p) = cfg.preset.clone() {
        cfg.stack = preset_stack(&p)?;
    } else if let Some(m) = cfg.map.clone() {
        cfg.stack = stack_from_map(&m, cfg.calibration.as_ref())?;
    }
    cfg.stack.validate()?;
    let positions = default_positions(cfg.stack.sample_length_um, cfg.position_step_um)?;
    let report = if cfg.constant_field {
        constant_report(&cfg, positions.len())?
    } else {
        let ens = EnsembleSpec::new(cfg.stack.clone(), cfg.realizations, cfg.seed);
        let settings = FluctuationSettings {
            lambda_range_nm: (cfg.lambda_min_nm, cfg.lambda_max_nm),
            wavelength_points: cfg.wavelength_points,
            positions_um: Some(positions),
            position_step_um: cfg.position_step_um,
        };
        fluctuation_histograms(&ens, &settings)?
    };
    let mut dir = OutDir::create(out)?;
    dir.write("intensity_histogram.csv", &report.intensity.to_csv())?;
    dir.write("ldos_histogram.csv", &report.ldos.to_csv())?;
    let mut surv = String::from("kind,threshold,probability\n");
    for h in [&report.intensity, &report.ldos] {
        for p in &h.survival {
            let _ = writeln!(surv, "{},{},{}", h.kind.name(), fmt_f64(p.threshold), fmt_f64(p.probability));
        }
    }
    dir.write("survival.csv", &surv)?;
    dir.write_json("histograms.json", &report)?;
    if cfg.svg {
        dir.write("intensity.svg", &report.intensity.to_svg())?;
        dir.write("ldos.svg", &report.ldos.to_svg())?;
    }
    let summary = json!({
        "stack": cfg.stack,
        "sample_count": report.intensity.sample_count,
        "intensity_mass": report.intensity.mass(),
        "ldos_mass": report.ldos.mass(),
        "intensity_survival": report.intensity.survival,
        "ldos_survival": report.ldos.survival,
    });
    dir.finish("intensity", Some(cfg.seed), &cfg, summary)
}
