use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use anderloc_core::inference::{
    add_measurement_noise, loss_q_per_um, mean_loss_length, q0_params, sample_distributed, sample_p1_seeded,
    ModelKind, DEFAULT_GROUP_INDEX,
};
use anderloc_core::spectra::{spectra_to_csv, DatasetMeta, QDataset, WaveguidePreset};
use anderloc_core::stack::realization_seed;

use super::{load_calibration, require};
use crate::config::resolve;
use crate::output::OutDir;
use crate::CliResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Q factors drawn from the truncated log-normal model.
    #[default]
    Qdataset,
    /// Position-resolved spectra of a synthetic waveguide.
    Spectra,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    #[arg(long, value_parser = ["qdataset", "spectra"])]
    pub kind: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["single", "distributed"])]
    pub model: Option<String>,
    /// Number of Q values.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub xi_over_l: Option<f64>,
    #[arg(long)]
    pub sample_length_um: Option<f64>,
    #[arg(long)]
    pub loss_length_um: Option<f64>,
    /// Log-mean of the loss length (µm) for the distributed model.
    #[arg(long)]
    pub mu_l: Option<f64>,
    #[arg(long)]
    pub s_l: Option<f64>,
    /// Reported uncertainty as a fraction of each Q.
    #[arg(long)]
    pub rel_sigma: Option<f64>,
    /// Perturb each Q by its reported uncertainty.
    #[arg(long)]
    pub noise: Option<bool>,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Number of modes in the synthetic waveguide.
    #[arg(long)]
    #[serde(skip)]
    pub mode_count: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub kind: SynthKind,
    pub seed: u64,
    pub model: ModelKind,
    pub count: usize,
    pub xi_over_l: f64,
    pub sample_length_um: f64,
    pub loss_length_um: f64,
    pub mu_l: f64,
    pub s_l: f64,
    pub rel_sigma: f64,
    pub noise: bool,
    pub wavelength_nm: f64,
    pub lambda_min_nm: f64,
    pub lambda_max_nm: f64,
    pub group_index: f64,
    pub calibration: Option<PathBuf>,
    pub preset: WaveguidePreset,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            kind: SynthKind::Qdataset,
            seed: 1,
            model: ModelKind::Single,
            count: 100,
            xi_over_l: 0.1,
            sample_length_um: 100.0,
            loss_length_um: 500.0,
            mu_l: 500f64.ln(),
            s_l: 0.5,
            rel_sigma: 0.05,
            noise: false,
            wavelength_nm: 950.0,
            lambda_min_nm: 947.5,
            lambda_max_nm: 952.5,
            group_index: DEFAULT_GROUP_INDEX,
            calibration: None,
            preset: WaveguidePreset::default(),
        }
    }
}

fn qdataset(cfg: &Config, dir: &mut OutDir) -> CliResult<serde_json::Value> {
    require(cfg.count >= 1, "count must be >= 1")?;
    require(
        cfg.rel_sigma > 0.0 && cfg.rel_sigma < 1.0,
        "rel_sigma must lie in (0, 1)",
    )?;
    let cal = load_calibration(cfg.calibration.as_ref())?;
    let (mu, s) = q0_params(&cal, cfg.xi_over_l)?;
    let c = loss_q_per_um(cfg.wavelength_nm, cfg.group_index);
    let q = match cfg.model {
        ModelKind::Single => {
            require(cfg.loss_length_um > 0.0, "loss_length_um must be > 0")?;
            sample_p1_seeded(cfg.count, mu, s, c * cfg.loss_length_um, cfg.seed)
        }
        ModelKind::Distributed => {
            require(cfg.s_l >= 0.0, "s_l must be >= 0")?;
            sample_distributed(cfg.count, mu, s, cfg.mu_l, cfg.s_l, c, cfg.seed)
        }
    };
    let sigma: Vec<f64> = q.iter().map(|v| v * cfg.rel_sigma).collect();
    let q = if cfg.noise {
        add_measurement_noise(&q, &sigma, realization_seed(cfg.seed, 1))?
    } else {
        q
    };
    let ds = QDataset::new(
        q,
        sigma,
        DatasetMeta {
            delta_label: None,
            lambda_range: Some((cfg.lambda_min_nm, cfg.lambda_max_nm)),
            sample_length_um: cfg.sample_length_um,
        },
    )?;
    dir.write("dataset.json", &(ds.to_json()? + "\n"))?;
    let loss = match cfg.model {
        ModelKind::Single => json!({ "kind": "single", "length_um": cfg.loss_length_um }),
        ModelKind::Distributed => json!({
            "kind": "distributed",
            "mu_l": cfg.mu_l,
            "s_l": cfg.s_l,
            "mean_length_um": mean_loss_length(cfg.mu_l, cfg.s_l)?,
        }),
    };
    let truth = json!({
        "xi_um": cfg.xi_over_l * cfg.sample_length_um,
        "xi_over_l": cfg.xi_over_l,
        "mu": mu,
        "s": s,
        "loss": loss,
        "count": ds.len(),
    });
    dir.write_json("truth.json", &truth)?;
    Ok(truth)
}

fn spectra(cfg: &Config, dir: &mut OutDir) -> CliResult<serde_json::Value> {
    let modes = cfg.preset.modes(cfg.seed)?;
    let spectra = cfg.preset.spectra(&modes, realization_seed(cfg.seed, 1))?;
    dir.write("spectra.csv", &spectra_to_csv(&spectra))?;
    dir.write_json("truth.json", &modes)?;
    Ok(json!({ "modes": modes.len(), "spectra": spectra.len() }))
}

pub fn run(flags: &Flags, file: Option<&Path>, out: &Path) -> CliResult<()> {
    let mut cfg: Config = resolve("synth", file, flags)?;
    if let Some(n) = flags.mode_count {
        cfg.preset.mode_count = n;
    }
    let mut dir = OutDir::create(out)?;
    let summary = match cfg.kind {
        SynthKind::Qdataset => qdataset(&cfg, &mut dir)?,
        SynthKind::Spectra => spectra(&cfg, &mut dir)?,
    };
    dir.finish("synth", Some(cfg.seed), &cfg, summary)
}
