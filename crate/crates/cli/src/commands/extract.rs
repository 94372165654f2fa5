use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use anderloc_core::io::fmt_f64;
use anderloc_core::spectra::{
    build_qdataset, extract_modes, spectra_from_csv, DatasetMeta, ExtractionSettings,
};

use super::{read_text, require};
use crate::config::resolve;
use crate::output::OutDir;
use crate::CliResult;

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Flags {
    /// Spectra CSV files with columns position_um,wavelength_nm,counts.
    #[arg(num_args = 0..)]
    pub inputs: Option<Vec<PathBuf>>,
    /// Instrument response FWHM, nm.
    #[arg(long)]
    pub irf_fwhm_nm: Option<f64>,
    /// Minimum peak prominence relative to the spectrum maximum.
    #[arg(long)]
    pub prominence: Option<f64>,
    #[arg(long)]
    pub max_peaks: Option<usize>,
    /// Center tolerance for merging peaks into one mode, in linewidths.
    #[arg(long)]
    pub lambda_tol: Option<f64>,
    /// Largest position gap linking two peaks of one mode, µm.
    #[arg(long)]
    pub z_link_um: Option<f64>,
    #[arg(long)]
    pub sample_length_um: Option<f64>,
    /// Disorder label, percent.
    #[arg(long)]
    pub delta_label: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub inputs: Vec<PathBuf>,
    pub irf_fwhm_nm: f64,
    pub prominence: f64,
    pub max_peaks: usize,
    pub lambda_tol: f64,
    pub z_link_um: f64,
    pub sample_length_um: f64,
    pub delta_label: Option<f64>,
}

impl Default for Config {
    fn default() -> Self {
        let s = ExtractionSettings::default();
        Self {
            inputs: Vec::new(),
            irf_fwhm_nm: 0.05,
            prominence: s.prominence,
            max_peaks: s.max_peaks,
            lambda_tol: s.lambda_tol,
            z_link_um: s.z_link_um,
            sample_length_um: 100.0,
            delta_label: None,
        }
    }
}

pub fn run(flags: &Flags, file: Option<&Path>, out: &Path) -> CliResult<()> {
    let flags = Flags {
        inputs: flags.inputs.clone().filter(|v| !v.is_empty()),
        ..flags.clone()
    };
    let cfg: Config = resolve("extract", file, &flags)?;
    require(!cfg.inputs.is_empty(), "extract needs at least one spectra CSV file")?;
    let mut spectra = Vec::new();
    for p in &cfg.inputs {
        let text = read_text(p)?;
        spectra.extend(spectra_from_csv(&text, &p.display().to_string(), cfg.irf_fwhm_nm)?);
    }
    let settings = ExtractionSettings {
        prominence: cfg.prominence,
        max_peaks: cfg.max_peaks,
        lambda_tol: cfg.lambda_tol,
        z_link_um: cfg.z_link_um,
    };
    let ext = extract_modes(&spectra, &settings)?;
    let ds = build_qdataset(
        &ext.modes,
        DatasetMeta {
            delta_label: cfg.delta_label,
            lambda_range: None,
            sample_length_um: cfg.sample_length_um,
        },
    )?;
    let mut dir = OutDir::create(out)?;
    dir.write("dataset.json", &(ds.to_json()? + "\n"))?;
    let mut table = String::from("mode,center_nm,q,sigma_q,z_m_um,members\n");
    for (i, (m, s)) in ext.modes.iter().zip(&ds.sigma_q).enumerate() {
        let _ = writeln!(
            table,
            "{i},{},{},{},{},{}",
            fmt_f64(m.center_nm),
            fmt_f64(m.q_best),
            fmt_f64(*s),
            fmt_f64(m.z_m_um),
            m.members.len()
        );
    }
    dir.write("modes.csv", &table)?;
    let summary = json!({
        "spectra": spectra.len(),
        "lines_fitted": ext.lines_fitted,
        "resolution_limited_excluded": ext.resolution_limited,
        "modes": ext.modes.len(),
    });
    dir.finish("extract", None, &cfg, summary)
}
