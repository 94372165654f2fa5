use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use anderloc_core::calibration::{run_calibration, CalibrationSettings, ResonanceSearch, DEFAULT_GRID};
use anderloc_core::StackSpec;

use super::{default_stack, require, StackFlags};
use crate::config::resolve;
use crate::output::OutDir;
use crate::CliResult;

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    #[command(flatten)]
    pub stack: StackFlags,
    /// Target ξ/L values, comma separated; at least four.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Realizations per ⟨ln T⟩ estimate.
    #[arg(long)]
    pub xi_realizations: Option<usize>,
    /// Realizations pooled for the in-plane Q statistics at each grid point.
    #[arg(long)]
    pub q_realizations: Option<usize>,
    #[arg(long)]
    pub wavelength_nm: Option<f64>,
    #[arg(long)]
    pub lambda_min_nm: Option<f64>,
    #[arg(long)]
    pub lambda_max_nm: Option<f64>,
    /// Step of the transmission scan that seeds the resonance search.
    #[arg(long)]
    pub coarse_step_nm: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Store every pooled Q factor in the calibration file.
    #[arg(long)]
    pub keep_samples: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub stack: StackSpec,
    pub grid: Vec<f64>,
    pub xi_realizations: usize,
    pub q_realizations: usize,
    pub wavelength_nm: f64,
    pub lambda_min_nm: f64,
    pub lambda_max_nm: f64,
    pub coarse_step_nm: f64,
    /// Lead index for the resonance search; unset matches the mean index.
    pub lead_index: Option<f64>,
    pub seed: u64,
    pub keep_samples: bool,
}

impl Default for Config {
    fn default() -> Self {
        let s = CalibrationSettings::default();
        Self {
            stack: default_stack(),
            grid: DEFAULT_GRID.to_vec(),
            xi_realizations: s.xi_realizations,
            q_realizations: s.q_realizations,
            wavelength_nm: s.wavelength_nm,
            lambda_min_nm: s.lambda_range.0,
            lambda_max_nm: s.lambda_range.1,
            coarse_step_nm: s.search.coarse_step_nm,
            lead_index: s.search.lead_index,
            seed: s.master_seed,
            keep_samples: false,
        }
    }
}

pub fn run(flags: &Flags, file: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg: Config = resolve("calibrate", file, flags)?;
    require(
        cfg.grid.len() >= 4,
        format!("calibration needs at least 4 grid points, got {}", cfg.grid.len()),
    )?;
    let settings = CalibrationSettings {
        grid: cfg.grid.clone(),
        xi_realizations: cfg.xi_realizations,
        q_realizations: cfg.q_realizations,
        wavelength_nm: cfg.wavelength_nm,
        lambda_range: (cfg.lambda_min_nm, cfg.lambda_max_nm),
        search: ResonanceSearch {
            coarse_step_nm: cfg.coarse_step_nm,
            lead_index: cfg.lead_index,
        },
        master_seed: cfg.seed,
        keep_samples: cfg.keep_samples,
    };
    let cal = run_calibration(&cfg.stack, &settings)?;
    let mut dir = OutDir::create(out)?;
    dir.write("calibration.json", &(cal.to_json()? + "\n"))?;
    let law = |f: &anderloc_core::calibration::PowerLawFit| {
        json!({
            "amplitude": f.amplitude,
            "amplitude_err": f.amplitude_err,
            "exponent": f.exponent,
            "exponent_err": f.exponent_err,
        })
    };
    let summary = json!({
        "delta_n_law": law(&cal.dn_law),
        "mu_law": law(&cal.mu_law),
        "s_law": law(&cal.s_law),
        "points": cal.points,
    });
    dir.finish("calibrate", Some(cfg.seed), &cfg, summary)
}
