mod calibrate;
mod extract;
mod infer;
mod intensity;
mod simulate;
mod synth;

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::Serialize;

use anderloc_core::calibration::Calibration;
use anderloc_core::StackSpec;

use crate::{usage, CliResult, GlobalArgs};

pub const COMMAND_NAMES: [&str; 6] = ["simulate", "calibrate", "extract", "infer", "intensity", "synth"];

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transmission scans and Green's-function samples of a disorder ensemble.
    Simulate(simulate::Flags),
    /// Fit the Δn, µ and s power laws against ξ/L.
    Calibrate(calibrate::Flags),
    /// Turn position-resolved spectra into a Q-factor dataset.
    Extract(extract::Flags),
    /// Grid posterior and MAP estimate of localization and loss lengths.
    Infer(infer::Flags),
    /// Intensity and LDOS fluctuation histograms.
    Intensity(intensity::Flags),
    /// Synthetic Q datasets or waveguide spectra with known ground truth.
    Synth(synth::Flags),
}

pub fn dispatch(cmd: &Command, global: &GlobalArgs) -> CliResult<()> {
    let cfg = global.config.as_deref();
    match cmd {
        Command::Simulate(f) => simulate::run(f, cfg, &global.out),
        Command::Calibrate(f) => calibrate::run(f, cfg, &global.out),
        Command::Extract(f) => extract::run(f, cfg, &global.out),
        Command::Infer(f) => infer::run(f, cfg, &global.out),
        Command::Intensity(f) => intensity::run(f, cfg, &global.out),
        Command::Synth(f) => synth::run(f, cfg, &global.out),
    }
}

/// Flags that override fields of the stack description. Serialized under
/// the `stack` key of a command configuration.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct StackFlags {
    /// Mean refractive index of the layers.
    #[arg(long)]
    pub mean_index: Option<f64>,
    /// Index disorder: layer indices are uniform in mean ± Δn/2.
    #[arg(long)]
    pub delta_n: Option<f64>,
    #[arg(long)]
    pub layer_thickness_nm: Option<f64>,
    #[arg(long)]
    pub sample_length_um: Option<f64>,
    /// Out-of-plane loss length; omit for a lossless medium.
    #[arg(long)]
    pub loss_length_um: Option<f64>,
    /// Index of the medium on both sides of the stack.
    #[arg(long)]
    pub surround_index: Option<f64>,
}

pub(crate) fn default_stack() -> StackSpec {
    StackSpec::default()
}

pub(crate) fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        anderloc_core::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))).into()
    })
}

/// A calibration file, or the nominal laws when no file is given.
pub(crate) fn load_calibration(path: Option<&PathBuf>) -> CliResult<Calibration> {
    match path {
        Some(p) => Ok(Calibration::from_json(&read_text(p)?)?),
        None => Ok(Calibration::reference()),
    }
}

pub(crate) fn require(cond: bool, msg: impl Into<String>) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(usage(msg))
    }
}
