use std::fmt::Write as _;
use std::path::Path;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use anderloc_core::io::fmt_f64;
use anderloc_core::numeric::stats;
use anderloc_core::wave::{uniform_grid, GreenField};
use anderloc_core::{EnsembleSpec, StackSpec, WaveSolver};

use super::{default_stack, require, StackFlags};
use crate::config::resolve;
use crate::output::OutDir;
use crate::CliResult;

const BATCH: usize = 64;

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    #[command(flatten)]
    pub stack: StackFlags,
    /// Number of disorder realizations.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub realizations: Option<u64>,
    /// Master seed; realization i uses a seed derived from it and i.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lambda_min_nm: Option<f64>,
    #[arg(long)]
    pub lambda_max_nm: Option<f64>,
    #[arg(long)]
    pub wavelength_points: Option<usize>,
    /// Source positions for averaged Green's-function samples, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub green_positions_um: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub stack: StackSpec,
    pub realizations: usize,
    pub seed: u64,
    pub lambda_min_nm: f64,
    pub lambda_max_nm: f64,
    pub wavelength_points: usize,
    pub green_positions_um: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            stack: default_stack(),
            realizations: 100,
            seed: 1,
            lambda_min_nm: 947.5,
            lambda_max_nm: 952.5,
            wavelength_points: 11,
            green_positions_um: Vec::new(),
        }
    }
}

struct Chunk {
    transmission: String,
    green: String,
    ln_t: Vec<f64>,
}

fn realization(ens: &EnsembleSpec, idx: usize, wavelengths: &[f64], positions: &[f64]) -> anderloc_core::Result<Chunk> {
    let stack = ens.realization(idx)?;
    let solver = WaveSolver::new(&stack);
    let seed = ens.seed(idx);
    let mut out = Chunk {
        transmission: String::new(),
        green: String::new(),
        ln_t: Vec::with_capacity(wavelengths.len()),
    };
    for &wl in wavelengths {
        let r = solver.response(wl)?;
        out.ln_t.push(r.ln_transmission);
        let _ = writeln!(
            out.transmission,
            "{idx},{seed},{},{},{}",
            fmt_f64(wl),
            fmt_f64(r.transmission),
            fmt_f64(r.ln_transmission)
        );
        if !positions.is_empty() {
            let field = GreenField::new(&solver, wl)?;
            for &z in positions {
                let g = field.averaged(z, 20.0)?.averaged_value;
                let _ = writeln!(out.green, "{idx},{},{},{},{}", fmt_f64(wl), fmt_f64(z), fmt_f64(g.re), fmt_f64(g.im));
            }
        }
    }
    Ok(out)
}

pub fn run(flags: &Flags, file: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg: Config = resolve("simulate", file, flags)?;
    require(cfg.realizations >= 1, "realizations must be >= 1")?;
    require(cfg.wavelength_points >= 1, "wavelength_points must be >= 1")?;
    let ens = EnsembleSpec::new(cfg.stack.clone(), cfg.realizations, cfg.seed);
    ens.validate()?;
    let wavelengths = if cfg.wavelength_points == 1 {
        vec![0.5 * (cfg.lambda_min_nm + cfg.lambda_max_nm)]
    } else {
        uniform_grid(cfg.lambda_min_nm, cfg.lambda_max_nm, cfg.wavelength_points)?
    };
    let mut dir = OutDir::create(out)?;
    let mut trans = String::from("realization,seed,wavelength_nm,transmission,ln_transmission\n");
    let mut green = String::from("realization,wavelength_nm,z_um,re_g,im_g\n");
    let mut ln_t = Vec::with_capacity(cfg.realizations * wavelengths.len());
    for start in (0..cfg.realizations).step_by(BATCH) {
        let end = (start + BATCH).min(cfg.realizations);
        let chunks = (start..end)
            .into_par_iter()
            .map(|i| realization(&ens, i, &wavelengths, &cfg.green_positions_um))
            .collect::<anderloc_core::Result<Vec<_>>>()?;
        for c in chunks {
            trans.push_str(&c.transmission);
            green.push_str(&c.green);
            ln_t.extend(c.ln_t);
        }
    }
    dir.write("transmission.csv", &trans)?;
    if !cfg.green_positions_um.is_empty() {
        dir.write("green.csv", &green)?;
    }
    let mean = stats::mean(&ln_t);
    let sem = if ln_t.len() > 1 {
        stats::std_dev(&ln_t) / (ln_t.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    let summary = json!({
        "samples": ln_t.len(),
        "mean_ln_transmission": mean,
        "mean_ln_transmission_err": if sem.is_finite() { Some(sem) } else { None },
        "attenuation_length_um": if mean < 0.0 { Some(-ens.base.sample_length_um / mean) } else { None },
    });
    dir.write_json("summary.json", &summary)?;
    dir.finish("simulate", Some(cfg.seed), &cfg, summary)
}
