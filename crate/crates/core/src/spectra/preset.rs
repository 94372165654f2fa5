use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{synth_spectrum, ModeProfile, PositionedSpectrum, SynthMode};
use crate::error::{domain, Result};
use crate::stack::realization_seed;

/// Synthetic scanned-waveguide measurement: localized modes at random
/// positions with log-normal Q factors and exponential intensity envelopes,
/// observed through a spectrometer every `scan_step_um`.
///
/// Envelope lengths are drawn per mode; they are what sets the apparent
/// spatial extent `z_m`, which is typically well below the localization
/// length because only the core of a mode rises above the detection
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveguidePreset {
    pub mode_count: usize,
    pub sample_length_um: f64,
    pub lambda_min_nm: f64,
    pub lambda_max_nm: f64,
    /// Mean and standard deviation of `ln Q`.
    pub ln_q_mean: f64,
    pub ln_q_sd: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Median intensity envelope length, µm.
    pub envelope_median_um: f64,
    /// Standard deviation of the log envelope length.
    pub envelope_log_sd: f64,
    pub scan_step_um: f64,
    pub grid_step_nm: f64,
    pub irf_fwhm_nm: f64,
    /// Noise standard deviation relative to each spectrum's maximum.
    pub noise_rms: f64,
}

impl Default for WaveguidePreset {
    fn default() -> Self {
        Self {
            mode_count: 130,
            sample_length_um: 100.0,
            lambda_min_nm: 935.0,
            lambda_max_nm: 965.0,
            ln_q_mean: 7.6,
            ln_q_sd: 0.8,
            q_min: 200.0,
            q_max: 10_000.0,
            envelope_median_um: 0.7,
            envelope_log_sd: 0.6,
            scan_step_um: 0.3,
            grid_step_nm: 0.015,
            irf_fwhm_nm: 0.05,
            noise_rms: 0.05,
        }
    }
}

impl WaveguidePreset {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mode_count > 0
            && self.sample_length_um > 0.0
            && self.lambda_max_nm > self.lambda_min_nm
            && self.lambda_min_nm > 0.0
            && self.q_max > self.q_min
            && self.q_min > 0.0
            && self.ln_q_sd >= 0.0
            && self.envelope_median_um > 0.0
            && self.envelope_log_sd >= 0.0
            && self.scan_step_um > 0.0
            && self.grid_step_nm > 0.0
            && self.irf_fwhm_nm >= 0.0
            && self.noise_rms >= 0.0;
        if !ok {
            return Err(domain("inconsistent waveguide preset"));
        }
        Ok(())
    }

    /// Ground-truth modes. Q values are drawn log-normally and redrawn until
    /// they fall inside `[q_min, q_max]`; centers keep a 1 nm margin from
    /// the grid ends.
    pub fn modes(&self, seed: u64) -> Result<Vec<SynthMode>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lnq = Normal::new(self.ln_q_mean, self.ln_q_sd).map_err(|e| domain(e.to_string()))?;
        let lnenv = Normal::new(self.envelope_median_um.ln(), self.envelope_log_sd)
            .map_err(|e| domain(e.to_string()))?;
        let (a, b) = (self.lambda_min_nm + 1.0, self.lambda_max_nm - 1.0);
        let mut modes = Vec::with_capacity(self.mode_count);
        for _ in 0..self.mode_count {
            let center_nm = rng.random_range(a..b);
            let q = loop {
                let q = lnq.sample(&mut rng).exp();
                if (self.q_min..=self.q_max).contains(&q) {
                    break q;
                }
            };
            let center_um = rng.random_range(0.0..self.sample_length_um);
            let decay_um = lnenv.sample(&mut rng).exp();
            let amplitude = 10f64.powf(rng.random_range(-0.5..0.0));
            modes.push(SynthMode {
                center_nm,
                fwhm_nm: center_nm / q,
                amplitude,
                profile: ModeProfile::Exponential { center_um, decay_um },
            });
        }
        Ok(modes)
    }

    pub fn wavelength_grid(&self) -> Vec<f64> {
        let n = ((self.lambda_max_nm - self.lambda_min_nm) / self.grid_step_nm).round() as usize + 1;
        let h = (self.lambda_max_nm - self.lambda_min_nm) / (n - 1) as f64;
        (0..n).map(|i| self.lambda_min_nm + h * i as f64).collect()
    }

    pub fn positions(&self) -> Vec<f64> {
        let n = (self.sample_length_um / self.scan_step_um).floor() as usize + 1;
        (0..n).map(|i| i as f64 * self.scan_step_um).collect()
    }

    /// Spectra at every scan position of the given ground truth.
    pub fn spectra(&self, modes: &[SynthMode], seed: u64) -> Result<Vec<PositionedSpectrum>> {
        let grid = self.wavelength_grid();
        self.positions()
            .iter()
            .enumerate()
            .map(|(i, &z)| {
                // modes far from z contribute nothing measurable
                let near: Vec<SynthMode> = modes
                    .iter()
                    .filter(|m| m.amplitude * m.profile.weight(z) > 1e-9)
                    .copied()
                    .collect();
                synth_spectrum(&near, z, self.noise_rms, self.irf_fwhm_nm, &grid, realization_seed(seed, i as u64))
            })
            .collect()
    }
}
