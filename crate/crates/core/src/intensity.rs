//! Intensity and LDOS fluctuations of a point source embedded in a stack.
//!
//! For a source at `z` the emitted intensity is `|⟨G(z, z)⟩|²` and the local
//! density of states is `Im ⟨G(z, z)⟩`, where `⟨·⟩` is the one-wavelength
//! window mean of the local Green's function. Spectra at each source position
//! are divided by their own wavelength average, and the normalized values of
//! all positions and realizations are pooled into logarithmic histograms.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::io::fmt_f64;
use crate::stack::{DisorderedStack, EnsembleSpec};
use crate::wave::{uniform_grid, GreenField, WaveSolver};

/// Averaging panels per `λ/n` used for all intensity work.
pub const SAMPLES_PER_WAVELENGTH: f64 = 20.0;
/// Default spacing of source positions, µm.
pub const DEFAULT_POSITION_STEP_UM: f64 = 0.3;
/// Abscissas at which survival probabilities are always recorded.
pub const SURVIVAL_AT: [f64; 3] = [3.0, 10.0, 30.0];
pub const BIN_MIN: f64 = 1e-3;
pub const BIN_MAX: f64 = 1e3;
pub const BINS_PER_DECADE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluctuationKind {
    Intensity,
    Ldos,
}

impl FluctuationKind {
    pub fn name(self) -> &'static str {
        match self {
            FluctuationKind::Intensity => "intensity",
            FluctuationKind::Ldos => "ldos",
        }
    }
}

fn averaged(stack: &DisorderedStack, z_src: f64, wavelength_nm: f64) -> Result<num_complex::Complex64> {
    let field = GreenField::new(&WaveSolver::new(stack), wavelength_nm)?;
    Ok(field.averaged(z_src, SAMPLES_PER_WAVELENGTH)?.averaged_value)
}

/// `|⟨G(z_src, z_src)⟩|²` in µm².
pub fn intensity_at(stack: &DisorderedStack, z_src_um: f64, wavelength_nm: f64) -> Result<f64> {
    Ok(averaged(stack, z_src_um, wavelength_nm)?.norm_sqr())
}

/// `Im ⟨G(z_src, z_src)⟩` in µm.
pub fn ldos_at(stack: &DisorderedStack, z_src_um: f64, wavelength_nm: f64) -> Result<f64> {
    Ok(averaged(stack, z_src_um, wavelength_nm)?.im)
}

/// Source positions `step/2, 3 step/2, …` inside `[0, length]`.
pub fn default_positions(length_um: f64, step_um: f64) -> Result<Vec<f64>> {
    if !(step_um > 0.0) || !(length_um > 0.0) || !length_um.is_finite() {
        return Err(domain(format!(
            "need positive length and step, got {length_um} and {step_um}"
        )));
    }
    let n = (length_um / step_um).floor() as usize;
    Ok((0..n).map(|i| (i as f64 + 0.5) * step_um).collect())
}

/// Raw intensity and LDOS of one stack, indexed `[position][wavelength]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpectra {
    pub positions_um: Vec<f64>,
    pub wavelengths_nm: Vec<f64>,
    pub intensity: Vec<Vec<f64>>,
    pub ldos: Vec<Vec<f64>>,
}

impl SourceSpectra {
    pub fn compute(stack: &DisorderedStack, positions_um: &[f64], wavelengths_nm: &[f64]) -> Result<Self> {
        if positions_um.is_empty() || wavelengths_nm.is_empty() {
            return Err(domain("need at least one source position and one wavelength"));
        }
        let solver = WaveSolver::new(stack);
        let np = positions_um.len();
        let mut intensity = vec![Vec::with_capacity(wavelengths_nm.len()); np];
        let mut ldos = vec![Vec::with_capacity(wavelengths_nm.len()); np];
        for &wl in wavelengths_nm {
            let field = GreenField::new(&solver, wl)?;
            for (i, &z) in positions_um.iter().enumerate() {
                let g = field.averaged(z, SAMPLES_PER_WAVELENGTH)?.averaged_value;
                intensity[i].push(g.norm_sqr());
                ldos[i].push(g.im);
            }
        }
        Ok(Self {
            positions_um: positions_um.to_vec(),
            wavelengths_nm: wavelengths_nm.to_vec(),
            intensity,
            ldos,
        })
    }

    pub fn series(&self, kind: FluctuationKind) -> &[Vec<f64>] {
        match kind {
            FluctuationKind::Intensity => &self.intensity,
            FluctuationKind::Ldos => &self.ldos,
        }
    }
}

/// Divide a spectrum by its mean over wavelength.
pub fn normalize_by_mean(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(domain("cannot normalize an empty spectrum"));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Integration(format!("non-physical spectral value {v}")));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Integration("spectrum has zero wavelength average".into()));
    }
    Ok(values.iter().map(|v| v / mean).collect())
}

/// Logarithmic bin edges from [`BIN_MIN`] to [`BIN_MAX`].
pub fn bin_edges() -> Vec<f64> {
    let lo = BIN_MIN.log10();
    let decades = (BIN_MAX.log10() - lo).round() as usize;
    let n = decades * BINS_PER_DECADE;
    (0..=n)
        .map(|i| 10f64.powf(lo + i as f64 / BINS_PER_DECADE as f64))
        .collect()
}

/// Integer bin counts; merging two accumulators is exact, so any split of the
/// pooled samples gives the same histogram.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramAccumulator {
    pub kind: FluctuationKind,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    /// Samples above each of [`SURVIVAL_AT`].
    pub exceed: [u64; 3],
    pub total: u64,
}

impl HistogramAccumulator {
    pub fn new(kind: FluctuationKind) -> Self {
        Self {
            kind,
            counts: vec![0; bin_edges().len() - 1],
            underflow: 0,
            overflow: 0,
            exceed: [0; 3],
            total: 0,
        }
    }

    /// Add one already-normalized value. Bins are closed on the left.
    pub fn add(&mut self, edges: &[f64], v: f64) {
        self.total += 1;
        for (c, &x) in self.exceed.iter_mut().zip(&SURVIVAL_AT) {
            *c += (v > x) as u64;
        }
        if v < edges[0] {
            self.underflow += 1;
        } else if v >= edges[edges.len() - 1] {
            self.overflow += 1;
        } else {
            self.counts[edges.partition_point(|&e| e <= v) - 1] += 1;
        }
    }

    /// Normalize a raw spectrum by its wavelength mean and add every value.
    pub fn add_spectrum(&mut self, edges: &[f64], raw: &[f64]) -> Result<()> {
        for v in normalize_by_mean(raw)? {
            self.add(edges, v);
        }
        Ok(())
    }

    pub fn merge(mut self, other: &Self) -> Self {
        debug_assert_eq!(self.kind, other.kind);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.exceed.iter_mut().zip(&other.exceed) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        self.total += other.total;
        self
    }

    pub fn finish(&self) -> Result<FluctuationHistogram> {
        if self.total == 0 {
            return Err(domain("no samples were pooled"));
        }
        let edges = bin_edges();
        let in_range: u64 = self.counts.iter().sum();
        let density = edges
            .windows(2)
            .zip(&self.counts)
            .map(|(w, &c)| {
                if in_range == 0 {
                    0.0
                } else {
                    c as f64 / (in_range as f64 * (w[1] - w[0]))
                }
            })
            .collect();
        let survival = SURVIVAL_AT
            .iter()
            .zip(&self.exceed)
            .map(|(&x, &c)| SurvivalPoint {
                threshold: x,
                probability: c as f64 / self.total as f64,
            })
            .collect();
        Ok(FluctuationHistogram {
            kind: self.kind,
            bin_edges: edges,
            probability_density: density,
            sample_count: self.total,
            underflow: self.underflow,
            overflow: self.overflow,
            survival,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub threshold: f64,
    /// Fraction of all pooled samples strictly above `threshold`.
    pub probability: f64,
}

/// Density of normalized values over logarithmic bins. The density is taken
/// relative to the samples that fall inside the binned range, so it
/// integrates to one; `underflow` and `overflow` count the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationHistogram {
    pub kind: FluctuationKind,
    pub bin_edges: Vec<f64>,
    pub probability_density: Vec<f64>,
    pub sample_count: u64,
    pub underflow: u64,
    pub overflow: u64,
    pub survival: Vec<SurvivalPoint>,
}

impl FluctuationHistogram {
    pub fn mass(&self) -> f64 {
        self.bin_edges
            .windows(2)
            .zip(&self.probability_density)
            .map(|(w, d)| d * (w[1] - w[0]))
            .sum()
    }

    /// Recorded survival probability at one of [`SURVIVAL_AT`].
    pub fn survival_at(&self, threshold: f64) -> Option<f64> {
        self.survival
            .iter()
            .find(|p| p.threshold == threshold)
            .map(|p| p.probability)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,density\n");
        for (w, d) in self.bin_edges.windows(2).zip(&self.probability_density) {
            let _ = writeln!(out, "{},{},{}", fmt_f64(w[0]), fmt_f64(w[1]), fmt_f64(*d));
        }
        out
    }

    pub fn survival_csv(&self) -> String {
        let mut out = String::from("threshold,probability\n");
        for p in &self.survival {
            let _ = writeln!(out, "{},{}", fmt_f64(p.threshold), fmt_f64(p.probability));
        }
        out
    }

    /// Static log-log plot of the density, with `e^{-x}` drawn dashed for
    /// comparison.
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (640.0, 420.0, 56.0);
        let (x0, x1) = (self.bin_edges[0].log10(), self.bin_edges[self.bin_edges.len() - 1].log10());
        let pts: Vec<(f64, f64)> = self
            .bin_edges
            .windows(2)
            .zip(&self.probability_density)
            .filter(|(_, d)| **d > 0.0)
            .map(|(e, d)| ((e[0] * e[1]).sqrt().log10(), d.log10()))
            .collect();
        let y1 = pts.iter().map(|p| p.1).fold(0.0, f64::max).ceil();
        let y0 = pts.iter().map(|p| p.1).fold(y1 - 1.0, f64::min).floor().max(y1 - 12.0);
        let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y.clamp(y0, y1) - y0) / (y1 - y0) * (h - 2.0 * m);
        let poly = |p: &[(f64, f64)]| {
            p.iter()
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let reference: Vec<(f64, f64)> = (0..=120)
            .map(|i| x0 + (x1 - x0) * i as f64 / 120.0)
            .map(|lx| (lx, -(10f64.powf(lx)) / std::f64::consts::LN_10))
            .filter(|p| p.1 >= y0)
            .collect();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - 2.0 * m,
            h - 2.0 * m
        );
        for d in (x0.round() as i32)..=(x1.round() as i32) {
            let x = sx(d as f64);
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{d}</text>"#,
                h - m + 16.0
            );
        }
        for d in (y0 as i32)..=(y1 as i32) {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{d}</text>"#,
                m - 6.0,
                sy(d as f64) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{} / mean</text>"#,
            w / 2.0,
            h - 12.0,
            self.kind.name()
        );
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="gray" stroke-dasharray="5,4" points="{}"/>"#,
            poly(&reference)
        );
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
            poly(&pts)
        );
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluctuationSettings {
    pub lambda_range_nm: (f64, f64),
    pub wavelength_points: usize,
    /// Explicit source positions; `None` uses a regular grid with `position_step_um`.
    pub positions_um: Option<Vec<f64>>,
    pub position_step_um: f64,
}

impl Default for FluctuationSettings {
    fn default() -> Self {
        Self {
            lambda_range_nm: (947.5, 952.5),
            wavelength_points: 251,
            positions_um: None,
            position_step_um: DEFAULT_POSITION_STEP_UM,
        }
    }
}

/// Intensity and LDOS histograms pooled from the same ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationReport {
    pub intensity: FluctuationHistogram,
    pub ldos: FluctuationHistogram,
}

/// Histograms of `I/⟨I⟩` and `LDOS/⟨LDOS⟩` over every realization, source
/// position and wavelength of `ens`.
pub fn fluctuation_histograms(ens: &EnsembleSpec, settings: &FluctuationSettings) -> Result<FluctuationReport> {
    ens.validate()?;
    let (lo, hi) = settings.lambda_range_nm;
    let wavelengths = uniform_grid(lo, hi, settings.wavelength_points)?;
    let positions = match &settings.positions_um {
        Some(p) => p.clone(),
        None => default_positions(ens.base.sample_length_um, settings.position_step_um)?,
    };
    if positions.is_empty() {
        return Err(domain("no source positions to pool"));
    }
    let edges = bin_edges();
    let empty = || {
        (
            HistogramAccumulator::new(FluctuationKind::Intensity),
            HistogramAccumulator::new(FluctuationKind::Ldos),
        )
    };
    let (acc_i, acc_l) = (0..ens.realization_count)
        .into_par_iter()
        .map(|idx| -> Result<_> {
            let stack = ens.realization(idx)?;
            let spectra = SourceSpectra::compute(&stack, &positions, &wavelengths)?;
            let (mut ai, mut al) = empty();
            for (si, sl) in spectra.intensity.iter().zip(&spectra.ldos) {
                ai.add_spectrum(&edges, si)?;
                al.add_spectrum(&edges, sl)?;
            }
            Ok((ai, al))
        })
        .try_reduce(empty, |a, b| Ok((a.0.merge(&b.0), a.1.merge(&b.1))))?;
    Ok(FluctuationReport {
        intensity: acc_i.finish()?,
        ldos: acc_l.finish()?,
    })
}

/// One of the two histograms of [`fluctuation_histograms`].
pub fn fluctuation_histogram(
    ens: &EnsembleSpec,
    settings: &FluctuationSettings,
    kind: FluctuationKind,
) -> Result<FluctuationHistogram> {
    let r = fluctuation_histograms(ens, settings)?;
    Ok(match kind {
        FluctuationKind::Intensity => r.intensity,
        FluctuationKind::Ldos => r.ldos,
    })
}
