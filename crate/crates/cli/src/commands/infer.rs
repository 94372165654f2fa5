use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use anderloc_core::inference::{
    loss_length_table, map_estimate, posterior, GridSpec, MapEstimate, MapLoss, ModelKind, PosteriorSettings,
    DEFAULT_GROUP_INDEX,
};
use anderloc_core::io::fmt_f64;
use anderloc_core::spectra::QDataset;

use super::{load_calibration, read_text, require};
use crate::config::resolve;
use crate::output::OutDir;
use crate::CliResult;

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    /// Q-factor dataset JSON, as written by `extract` or `synth`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Calibration JSON; the nominal laws are used when omitted.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long, value_parser = ["single", "distributed"])]
    pub model: Option<String>,
    /// Wavelength for the loss Q; defaults to the middle of the dataset range.
    #[arg(long)]
    pub wavelength_nm: Option<f64>,
    #[arg(long)]
    pub group_index: Option<f64>,
    #[arg(long)]
    pub loss_table_points: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub xi_points: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub loss_points: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub mu_l_points: Option<usize>,
    #[arg(long)]
    #[serde(skip)]
    pub s_l_points: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dataset: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub model: ModelKind,
    pub grids: GridSpec,
    pub wavelength_nm: Option<f64>,
    pub group_index: f64,
    pub loss_table_points: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            dataset: None,
            calibration: None,
            model: ModelKind::Single,
            grids: GridSpec::default(),
            wavelength_nm: None,
            group_index: DEFAULT_GROUP_INDEX,
            loss_table_points: 200,
        }
    }
}

/// MAP estimate plus the context needed to use it downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub model: ModelKind,
    #[serde(flatten)]
    pub map: MapEstimate,
    /// Mean loss length of the distributed model.
    pub l_d_um: Option<f64>,
    pub sample_length_um: f64,
    pub wavelength_nm: f64,
    pub group_index: f64,
    pub data_count: usize,
}

pub fn run(flags: &Flags, file: Option<&Path>, out: &Path) -> CliResult<()> {
    let mut cfg: Config = resolve("infer", file, flags)?;
    for (slot, v) in [
        (&mut cfg.grids.xi_um.points, flags.xi_points),
        (&mut cfg.grids.loss_um.points, flags.loss_points),
        (&mut cfg.grids.mu_l.points, flags.mu_l_points),
        (&mut cfg.grids.s_l.points, flags.s_l_points),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    let Some(ds_path) = cfg.dataset.clone() else {
        return Err(crate::usage("infer needs --dataset"));
    };
    require(cfg.loss_table_points >= 2, "loss_table_points must be >= 2")?;
    let dataset = QDataset::from_json(&read_text(&ds_path)?)?;
    let cal = load_calibration(cfg.calibration.as_ref())?;
    let settings = PosteriorSettings {
        model: cfg.model,
        grids: cfg.grids,
        wavelength_nm: cfg.wavelength_nm,
        group_index: cfg.group_index,
    };
    let post = posterior(&dataset, &cal, &settings)?;
    let map = map_estimate(&post);
    let l_d_um = match map.loss {
        MapLoss::Distributed { mean_length_um, .. } => Some(mean_length_um),
        MapLoss::Single { .. } => None,
    };
    let report = MapReport {
        model: post.model,
        map: map.clone(),
        l_d_um,
        sample_length_um: post.sample_length_um,
        wavelength_nm: post.wavelength_nm,
        group_index: post.group_index,
        data_count: post.data_count,
    };
    let mut dir = OutDir::create(out)?;
    dir.write("posterior.json", &(post.to_json()? + "\n"))?;
    dir.write("posterior.csv", &post.to_csv())?;
    dir.write_json("map.json", &report)?;
    if let MapLoss::Distributed { mu_l, s_l, .. } = map.loss {
        let rows = loss_length_table(mu_l, s_l, post.wavelength_nm, post.group_index, cfg.loss_table_points)?;
        let mut t = String::from("length_um,q_l,density_per_um\n");
        for r in rows {
            let _ = writeln!(t, "{},{},{}", fmt_f64(r.length_um), fmt_f64(r.q_l), fmt_f64(r.density_per_um));
        }
        dir.write("loss_table.csv", &t)?;
    }
    let summary = json!({
        "model": post.model,
        "xi_um": map.xi_um,
        "loss": map.loss,
        "l_d_um": l_d_um,
        "on_boundary": map.on_boundary,
        "degenerate": map.degenerate,
        "data_count": post.data_count,
        "calibration": if cfg.calibration.is_some() { "file" } else { "nominal" },
    });
    dir.finish("infer", None, &cfg, summary)
}
