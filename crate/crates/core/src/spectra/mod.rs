//! From position-resolved spectra to Q-factor datasets.
//!
//! The pipeline is [`synth_spectrum`] (or measured data) →
//! [`find_resonances`] → [`deconvolve_irf`] → [`group_modes`] →
//! [`build_qdataset`]. Widths are full widths at half maximum in nm and
//! `Q = center / fwhm`.

mod fit;
mod preset;

pub use fit::{fit_lorentzians, lorentzian, LineFit, LorentzFit};
pub use preset::WaveguidePreset;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::io::{fmt_f64, parse_csv};
use crate::numeric::stats::median;
use crate::wave::{SpectrumKind, SpectrumScan};

/// Spectrometer resolution used when none is given, nm.
pub const DEFAULT_IRF_FWHM_NM: f64 = 0.05;
/// Relative σ_Q floor applied when building datasets.
pub const SIGMA_Q_FLOOR: f64 = 0.05;

/// Smallest intrinsic width, relative to the instrument width, that
/// deconvolution reports.
pub const MIN_RESOLVED_FRACTION: f64 = 0.25;

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// One spectrum recorded at a position along the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionedSpectrum {
    pub position_um: f64,
    pub scan: SpectrumScan,
    pub irf_fwhm_nm: f64,
}

impl PositionedSpectrum {
    pub fn new(position_um: f64, scan: SpectrumScan, irf_fwhm_nm: f64) -> Result<Self> {
        if !(position_um >= 0.0) {
            return Err(domain(format!("position {position_um} µm must be >= 0")));
        }
        if !(irf_fwhm_nm >= 0.0) {
            return Err(domain(format!("irf fwhm {irf_fwhm_nm} nm must be >= 0")));
        }
        Ok(Self {
            position_um,
            scan,
            irf_fwhm_nm,
        })
    }
}

/// Spatial intensity weight of a synthetic mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModeProfile {
    Uniform,
    /// `exp(-|z - center| / decay)`.
    Exponential { center_um: f64, decay_um: f64 },
    /// `exp(-(z - center)² / (2 width²))`.
    Gaussian { center_um: f64, width_um: f64 },
}

impl ModeProfile {
    pub fn weight(&self, z_um: f64) -> f64 {
        match *self {
            ModeProfile::Uniform => 1.0,
            ModeProfile::Exponential { center_um, decay_um } => {
                (-(z_um - center_um).abs() / decay_um).exp()
            }
            ModeProfile::Gaussian { center_um, width_um } => {
                let u = (z_um - center_um) / width_um;
                (-0.5 * u * u).exp()
            }
        }
    }
}

/// Ground truth for one synthetic resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthMode {
    pub center_nm: f64,
    pub fwhm_nm: f64,
    pub amplitude: f64,
    pub profile: ModeProfile,
}

impl SynthMode {
    pub fn q(&self) -> f64 {
        self.center_nm / self.fwhm_nm
    }
}

/// A fitted Lorentzian line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub center_nm: f64,
    /// Lorentzian FWHM; after [`deconvolve_irf`] the intrinsic width.
    pub fwhm_nm: f64,
    pub amplitude: f64,
    pub q: f64,
    /// Standard error of `q`.
    pub q_err: f64,
    pub position_um: f64,
    pub center_err_nm: f64,
    pub fwhm_err_nm: f64,
    /// Width as fitted, before any instrument correction.
    pub apparent_fwhm_nm: f64,
    /// Instrument width removed by deconvolution, 0 if none.
    pub irf_fwhm_nm: f64,
}

impl Resonance {
    /// Relative width correction applied by deconvolution.
    pub fn correction(&self) -> f64 {
        1.0 - self.fwhm_nm / self.apparent_fwhm_nm
    }
}

/// Peaks seen at several positions and attributed to one localized mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRecord {
    pub members: Vec<Resonance>,
    /// Amplitude-weighted mean center.
    pub center_nm: f64,
    /// Q of the strongest member.
    pub q_best: f64,
    /// Largest distance between member positions.
    pub z_m_um: f64,
}

impl ModeRecord {
    fn from_members(members: Vec<Resonance>) -> Self {
        let wsum: f64 = members.iter().map(|r| r.amplitude.max(0.0)).sum();
        let center_nm = if wsum > 0.0 {
            members.iter().map(|r| r.amplitude.max(0.0) * r.center_nm).sum::<f64>() / wsum
        } else {
            members.iter().map(|r| r.center_nm).sum::<f64>() / members.len() as f64
        };
        let best = Self::best_of(&members);
        let (lo, hi) = members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
            (a.min(r.position_um), b.max(r.position_um))
        });
        Self {
            center_nm,
            q_best: members[best].q,
            z_m_um: hi - lo,
            members,
        }
    }

    fn best_of(members: &[Resonance]) -> usize {
        let mut best = 0;
        for (i, r) in members.iter().enumerate() {
            if r.amplitude > members[best].amplitude {
                best = i;
            }
        }
        best
    }

    /// The strongest member, which sets `q_best`.
    pub fn best(&self) -> &Resonance {
        &self.members[Self::best_of(&self.members)]
    }
}

/// Q factors with uncertainties, one per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QDataset {
    pub q: Vec<f64>,
    pub sigma_q: Vec<f64>,
    /// Disorder label in percent; metadata only.
    #[serde(default)]
    pub delta_label: Option<f64>,
    pub lambda_range: (f64, f64),
    pub sample_length_um: f64,
}

/// Labels attached to a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DatasetMeta {
    pub delta_label: Option<f64>,
    /// Defaults to the span of the mode centers.
    pub lambda_range: Option<(f64, f64)>,
    pub sample_length_um: f64,
}

impl QDataset {
    pub fn new(q: Vec<f64>, sigma_q: Vec<f64>, meta: DatasetMeta) -> Result<Self> {
        let ds = Self {
            q,
            sigma_q,
            delta_label: meta.delta_label,
            lambda_range: meta.lambda_range.unwrap_or((0.0, 0.0)),
            sample_length_um: meta.sample_length_um,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.is_empty() {
            return Err(Error::EmptyDataset("no Q values".into()));
        }
        if self.q.len() != self.sigma_q.len() {
            return Err(domain("q and sigma_q must have the same length"));
        }
        if let Some(i) = self.q.iter().position(|&q| !(q > 0.0 && q.is_finite())) {
            return Err(domain(format!("Q value {} at index {i} must be > 0", self.q[i])));
        }
        if let Some(i) = self.sigma_q.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(domain(format!("sigma_q at index {i} must be > 0")));
        }
        if !(self.sample_length_um > 0.0) {
            return Err(domain("sample_length_um must be > 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ds: Self = serde_json::from_str(text)?;
        ds.validate()?;
        Ok(ds)
    }
}

/// Sum of profile-weighted Lorentzians at `position_um`, convolved with a
/// Gaussian instrument response and with Gaussian noise of standard
/// deviation `noise_rms × max(signal)` added.
///
/// The grid must be uniform and put at least 4 steps across the narrowest
/// line.
pub fn synth_spectrum(
    modes: &[SynthMode],
    position_um: f64,
    noise_rms: f64,
    irf_fwhm_nm: f64,
    grid_nm: &[f64],
    seed: u64,
) -> Result<PositionedSpectrum> {
    if let Some(m) = modes.iter().find(|m| !(m.fwhm_nm > 0.0)) {
        return Err(domain(format!("mode at {} nm has fwhm {} <= 0", m.center_nm, m.fwhm_nm)));
    }
    if !(noise_rms >= 0.0) || !(irf_fwhm_nm >= 0.0) {
        return Err(domain("noise_rms and irf_fwhm must be >= 0"));
    }
    if grid_nm.len() < 2 {
        return Err(domain("grid needs at least 2 points"));
    }
    let h = (grid_nm[grid_nm.len() - 1] - grid_nm[0]) / (grid_nm.len() - 1) as f64;
    let uniform = grid_nm
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-6 * h.abs());
    if !(h > 0.0) || !uniform {
        return Err(domain("synthesis grid must be uniform and increasing"));
    }
    let narrowest = modes.iter().map(|m| m.fwhm_nm).fold(f64::INFINITY, f64::min);
    if narrowest < 4.0 * h {
        return Err(Error::UnderResolved(format!(
            "grid step {h} nm puts fewer than 5 points across the narrowest line ({narrowest} nm)"
        )));
    }

    let active: Vec<(f64, f64, f64)> = modes
        .iter()
        .map(|m| (m.center_nm, m.fwhm_nm, m.amplitude * m.profile.weight(position_um)))
        .filter(|m| m.2 != 0.0)
        .collect();
    let clean = |x: f64| -> f64 { active.iter().map(|&(c, w, a)| lorentzian(x, c, w, a)).sum() };

    let mut values: Vec<f64> = if irf_fwhm_nm == 0.0 {
        grid_nm.iter().map(|&x| clean(x)).collect()
    } else {
        // convolve on an oversampled grid extended past both ends, where
        // the clean signal is known analytically
        let sigma = irf_fwhm_nm / FWHM_PER_SIGMA;
        let fine = (sigma / 4.0).min(narrowest / 8.0);
        let over = (h / fine).ceil().max(1.0) as usize;
        let hf = h / over as f64;
        let half = (5.0 * sigma / hf).ceil() as usize;
        let kernel: Vec<f64> = (0..=2 * half)
            .map(|i| {
                let t = (i as f64 - half as f64) * hf / sigma;
                (-0.5 * t * t).exp()
            })
            .collect();
        let ksum: f64 = kernel.iter().sum();
        let start = grid_nm[0] - half as f64 * hf;
        let n_fine = (grid_nm.len() - 1) * over + 1 + 2 * half;
        let fine_vals: Vec<f64> = (0..n_fine).map(|i| clean(start + i as f64 * hf)).collect();
        (0..grid_nm.len())
            .map(|i| {
                let c = i * over;
                kernel.iter().zip(&fine_vals[c..c + 2 * half + 1]).map(|(k, v)| k * v).sum::<f64>()
                    / ksum
            })
            .collect()
    };

    if noise_rms > 0.0 {
        let peak = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if peak > 0.0 {
            let normal = Normal::new(0.0, noise_rms * peak).map_err(|e| domain(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in &mut values {
                *v += normal.sample(&mut rng);
            }
        }
    }
    let scan = SpectrumScan::new(grid_nm.to_vec(), values, SpectrumKind::Intensity)?;
    PositionedSpectrum::new(position_um, scan, irf_fwhm_nm)
}

/// 1-4-6-4-1 smoothing, used only to locate peaks.
fn smooth(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let at = |i: isize| y[i.clamp(0, n as isize - 1) as usize];
    (0..n as isize)
        .map(|i| {
            (at(i - 2) + 4.0 * at(i - 1) + 6.0 * at(i) + 4.0 * at(i + 1) + at(i + 2)) / 16.0
        })
        .collect()
}

/// Robust noise σ of `y` from its second differences.
fn noise_sigma(y: &[f64]) -> f64 {
    if y.len() < 3 {
        return 0.0;
    }
    let d2: Vec<f64> = y.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).abs()).collect();
    1.4826 * median(&d2) / 6f64.sqrt()
}

struct Candidate {
    index: usize,
    prominence: f64,
    fwhm: f64,
}

fn candidates(x: &[f64], s: &[f64], min_prominence: f64) -> Vec<Candidate> {
    let n = s.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if s[i] > s[i - 1] {
            // walk across a plateau
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] < s[i] {
                let peak = (i + j) / 2;
                let h = s[peak];
                let mut left_min = h;
                let mut k = i;
                while k > 0 && s[k - 1] <= h {
                    k -= 1;
                    left_min = left_min.min(s[k]);
                }
                let mut right_min = h;
                let mut k = j;
                while k + 1 < n && s[k + 1] <= h {
                    k += 1;
                    right_min = right_min.min(s[k]);
                }
                let prominence = h - left_min.max(right_min);
                if prominence >= min_prominence {
                    let level = h - 0.5 * prominence;
                    let cross = |mut k: usize, step: isize| -> f64 {
                        loop {
                            let next = k as isize + step;
                            if next < 0 || next as usize >= n {
                                return x[k];
                            }
                            let nx = next as usize;
                            if s[nx] <= level {
                                let f = (s[k] - level) / (s[k] - s[nx]);
                                return x[k] + f * (x[nx] - x[k]);
                            }
                            k = nx;
                        }
                    };
                    let fwhm = cross(peak, 1) - cross(peak, -1);
                    out.push(Candidate {
                        index: peak,
                        prominence,
                        fwhm: fwhm.max(2.0 * (x[1] - x[0])),
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Locate and fit Lorentzian lines.
///
/// Local maxima whose prominence exceeds `prominence × (max − min)` of the
/// smoothed spectrum (and five noise σ) become candidates; the
/// `max_peaks` most prominent are fitted over ±3 FWHM. Candidates whose
/// windows overlap by more than a quarter are fitted jointly. Lines whose
/// fit fails, whose amplitude is under three noise σ or whose width is
/// uncertain by more than half are dropped with a log message.
pub fn find_resonances(
    spec: &PositionedSpectrum,
    prominence: f64,
    max_peaks: usize,
) -> Result<Vec<Resonance>> {
    let x = &spec.scan.wavelengths_nm;
    let y = &spec.scan.values;
    if x.len() < 16 {
        return Err(domain(format!("spectrum has {} points, need >= 16", x.len())));
    }
    if !(prominence > 0.0 && prominence < 1.0) {
        return Err(domain("prominence must lie in (0, 1)"));
    }
    let s = smooth(y);
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    let range = hi - lo;
    if !(range > 0.0) {
        return Ok(Vec::new());
    }
    let sigma = noise_sigma(y);
    let sigma_s = sigma * (70.0f64 / 256.0).sqrt();
    let mut cands = candidates(x, &s, (prominence * range).max(5.0 * sigma_s));
    cands.sort_by(|a, b| b.prominence.total_cmp(&a.prominence));
    cands.truncate(max_peaks);
    cands.sort_by_key(|c| c.index);

    let windows: Vec<(f64, f64)> = cands
        .iter()
        .map(|c| (x[c.index] - 3.0 * c.fwhm, x[c.index] + 3.0 * c.fwhm))
        .collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        let joins = i > 0 && {
            let prev = windows[i - 1];
            let overlap = prev.1.min(w.1) - prev.0.max(w.0);
            overlap > 0.25 * (prev.1 - prev.0).min(w.1 - w.0)
        };
        match groups.last_mut() {
            Some(g) if joins => g.push(i),
            _ => groups.push(vec![i]),
        }
    }

    let mut out = Vec::new();
    for g in groups {
        let joint = fit_group(spec, &cands, &windows, &s, sigma, &g);
        if joint.is_none() && g.len() > 1 {
            // noise bumps on a broad line can stall the joint fit
            for &i in &g {
                out.extend(fit_group(spec, &cands, &windows, &s, sigma, &[i]).unwrap_or_default());
            }
        } else {
            out.extend(joint.unwrap_or_default());
        }
    }
    Ok(out)
}

/// Fit the candidates `g` jointly over the union of their windows. `None`
/// when the fit did not converge; otherwise the lines that pass the checks.
fn fit_group(
    spec: &PositionedSpectrum,
    cands: &[Candidate],
    windows: &[(f64, f64)],
    s: &[f64],
    sigma: f64,
    g: &[usize],
) -> Option<Vec<Resonance>> {
    let x = &spec.scan.wavelengths_nm;
    let y = &spec.scan.values;
    let wlo = g.iter().map(|&i| windows[i].0).fold(f64::INFINITY, f64::min);
    let whi = g.iter().map(|&i| windows[i].1).fold(f64::NEG_INFINITY, f64::max);
    let a = x.partition_point(|&v| v < wlo);
    let b = x.partition_point(|&v| v <= whi);
    let (xs, ys) = (&x[a..b], &y[a..b]);
    let base0 = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let init: Vec<(f64, f64, f64)> = g
        .iter()
        .map(|&i| {
            let c = &cands[i];
            (x[c.index], c.fwhm, (s[c.index] - base0).max(c.prominence))
        })
        .collect();
    let Some(fit) = fit_lorentzians(xs, ys, &init, Some(base0)) else {
        log::debug!(
            "fit skipped near {:.4} nm at z = {} µm: too few points",
            x[cands[g[0]].index],
            spec.position_um
        );
        return Some(Vec::new());
    };
    if !fit.converged {
        log::debug!(
            "fit of {} line(s) near {:.4} nm at z = {} µm did not converge",
            g.len(),
            x[cands[g[0]].index],
            spec.position_um
        );
        return None;
    }
    let step = x[1] - x[0];
    let mut out = Vec::new();
    for (line, &i) in fit.lines.iter().zip(g) {
        let ok = line.amplitude > 0.0
            && line.fwhm >= step
            && line.fwhm < whi - wlo
            && line.center >= xs[0]
            && line.center <= xs[xs.len() - 1]
            && line.amplitude >= 3.0 * sigma
            && !(line.fwhm_err > 0.5 * line.fwhm);
        if !ok {
            log::debug!(
                "dropped line near {:.4} nm at z = {} µm: fit gave center {}, fwhm {}, amplitude {}",
                x[cands[i].index],
                spec.position_um,
                line.center,
                line.fwhm,
                line.amplitude
            );
            continue;
        }
        let q = line.center / line.fwhm;
        let rel = ((line.fwhm_err / line.fwhm).powi(2) + (line.center_err / line.center).powi(2)).sqrt();
        out.push(Resonance {
            center_nm: line.center,
            fwhm_nm: line.fwhm,
            amplitude: line.amplitude,
            q,
            q_err: if rel.is_finite() && rel > 0.0 { q * rel } else { SIGMA_Q_FLOOR * q },
            position_um: spec.position_um,
            center_err_nm: line.center_err,
            fwhm_err_nm: line.fwhm_err,
            apparent_fwhm_nm: line.fwhm,
            irf_fwhm_nm: 0.0,
        });
    }
    Some(out)
}

/// Voigt FWHM of a Lorentzian and a Gaussian (Olivero–Longbothum).
pub fn voigt_fwhm(lorentz_fwhm: f64, gauss_fwhm: f64) -> f64 {
    0.5346 * lorentz_fwhm + (0.2166 * lorentz_fwhm * lorentz_fwhm + gauss_fwhm * gauss_fwhm).sqrt()
}

/// Lorentzian width that combines with a Gaussian of FWHM `gauss_fwhm` to
/// the Voigt width `voigt`, or `None` if no positive width does.
pub fn lorentz_fwhm_from_voigt(voigt: f64, gauss_fwhm: f64) -> Option<f64> {
    if !(voigt > gauss_fwhm) {
        return None;
    }
    // (v - a fL)² = b fL² + g²  ⇒  (a² - b) fL² - 2 a v fL + v² - g² = 0
    let (a, b) = (0.5346, 0.2166);
    let qa = a * a - b;
    let qb = -2.0 * a * voigt;
    let qc = voigt * voigt - gauss_fwhm * gauss_fwhm;
    let disc = qb * qb - 4.0 * qa * qc;
    // smaller root; the larger one violates v - a fL >= 0
    let root = 2.0 * qc / (-qb + disc.max(0.0).sqrt());
    (root > 0.0).then_some(root)
}

/// Remove a Gaussian instrument response of FWHM `irf_fwhm_nm` from the
/// fitted width by inverting the Voigt width relation, recomputing `q`.
///
/// Fails with [`Error::ResolutionLimited`] when the apparent width is at
/// most 0.9 instrument widths or the recovered width is below
/// [`MIN_RESOLVED_FRACTION`] of it.
pub fn deconvolve_irf(res: &Resonance, irf_fwhm_nm: f64) -> Result<Resonance> {
    if !(irf_fwhm_nm >= 0.0) {
        return Err(domain(format!("irf fwhm {irf_fwhm_nm} nm must be >= 0")));
    }
    if irf_fwhm_nm == 0.0 {
        return Ok(*res);
    }
    let apparent = res.apparent_fwhm_nm;
    let limited = Error::ResolutionLimited {
        apparent_nm: apparent,
        irf_nm: irf_fwhm_nm,
    };
    if apparent <= 0.9 * irf_fwhm_nm {
        return Err(limited);
    }
    let fl = lorentz_fwhm_from_voigt(apparent, irf_fwhm_nm).ok_or(limited)?;
    // below a quarter of the instrument width the Voigt width sits within
    // 15 % of the instrument alone, so the Lorentzian part is not measurable
    if fl < MIN_RESOLVED_FRACTION * irf_fwhm_nm {
        return Err(Error::ResolutionLimited {
            apparent_nm: apparent,
            irf_nm: irf_fwhm_nm,
        });
    }
    let slope = 0.5346 + 0.2166 * fl / (0.2166 * fl * fl + irf_fwhm_nm * irf_fwhm_nm).sqrt();
    let fwhm_err = res.fwhm_err_nm / slope;
    let q = res.center_nm / fl;
    let rel = ((fwhm_err / fl).powi(2) + (res.center_err_nm / res.center_nm).powi(2)).sqrt();
    Ok(Resonance {
        fwhm_nm: fl,
        fwhm_err_nm: fwhm_err,
        q,
        q_err: if rel.is_finite() && rel > 0.0 { q * rel } else { SIGMA_Q_FLOOR * q },
        irf_fwhm_nm,
        ..*res
    })
}

fn canonical_cmp(a: &Resonance, b: &Resonance) -> std::cmp::Ordering {
    a.center_nm
        .total_cmp(&b.center_nm)
        .then(a.position_um.total_cmp(&b.position_um))
        .then(a.fwhm_nm.total_cmp(&b.fwhm_nm))
        .then(a.amplitude.total_cmp(&b.amplitude))
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Split a center-sorted cluster at its widest gaps until every part spans
/// at most `3 λ_tol` median widths.
fn split_cluster(members: Vec<Resonance>, lambda_tol: f64, out: &mut Vec<Vec<Resonance>>) {
    if members.len() > 1 {
        let widths: Vec<f64> = members.iter().map(|r| r.fwhm_nm).collect();
        let limit = 3.0 * lambda_tol * median(&widths);
        let span = members[members.len() - 1].center_nm - members[0].center_nm;
        if span > limit {
            let mut cut = 1;
            let mut gap = f64::NEG_INFINITY;
            for i in 1..members.len() {
                let g = members[i].center_nm - members[i - 1].center_nm;
                if g > gap {
                    gap = g;
                    cut = i;
                }
            }
            let mut left = members;
            let right = left.split_off(cut);
            split_cluster(left, lambda_tol, out);
            split_cluster(right, lambda_tol, out);
            return;
        }
    }
    out.push(members);
}

/// Single-linkage grouping of resonances into modes.
///
/// Two resonances link when their centers differ by at most
/// `lambda_tol × min(fwhm)` and their positions by at most `z_link_um`.
/// The result does not depend on the input order.
pub fn group_modes(resonances: &[Resonance], lambda_tol: f64, z_link_um: f64) -> Vec<ModeRecord> {
    let mut rs = resonances.to_vec();
    rs.sort_by(canonical_cmp);
    let n = rs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let dc = rs[j].center_nm - rs[i].center_nm;
            if dc > lambda_tol * rs[i].fwhm_nm {
                break;
            }
            if dc <= lambda_tol * rs[i].fwhm_nm.min(rs[j].fwhm_nm)
                && (rs[j].position_um - rs[i].position_um).abs() <= z_link_um
            {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<Resonance>> = BTreeMap::new();
    for (i, r) in rs.into_iter().enumerate() {
        let root = find(&mut parent, i);
        clusters.entry(root).or_default().push(r);
    }
    let mut parts = Vec::new();
    for (_, members) in clusters {
        split_cluster(members, lambda_tol, &mut parts);
    }
    let mut modes: Vec<ModeRecord> = parts.into_iter().map(ModeRecord::from_members).collect();
    modes.sort_by(|a, b| {
        a.center_nm
            .total_cmp(&b.center_nm)
            .then(canonical_cmp(&a.members[0], &b.members[0]))
    });
    modes
}

/// One `(Q, σ_Q)` per mode from its strongest member, with
/// `σ_Q = max(q_err, 5 % of Q)`.
pub fn build_qdataset(modes: &[ModeRecord], meta: DatasetMeta) -> Result<QDataset> {
    if modes.is_empty() {
        return Err(Error::EmptyDataset("no Q values".into()));
    }
    let mut q = Vec::with_capacity(modes.len());
    let mut sigma = Vec::with_capacity(modes.len());
    for m in modes {
        let b = m.best();
        q.push(b.q);
        let floor = SIGMA_Q_FLOOR * b.q;
        sigma.push(if b.q_err.is_finite() { b.q_err.max(floor) } else { floor });
    }
    let range = meta.lambda_range.unwrap_or_else(|| {
        modes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), m| {
            (a.min(m.center_nm), b.max(m.center_nm))
        })
    });
    QDataset::new(
        q,
        sigma,
        DatasetMeta {
            lambda_range: Some(range),
            ..meta
        },
    )
}

/// Long-format CSV: `position_um,wavelength_nm,counts`.
pub fn spectra_to_csv(spectra: &[PositionedSpectrum]) -> String {
    let mut s = String::from("position_um,wavelength_nm,counts\n");
    for sp in spectra {
        let p = fmt_f64(sp.position_um);
        for (w, v) in sp.scan.wavelengths_nm.iter().zip(&sp.scan.values) {
            s.push_str(&p);
            s.push(',');
            s.push_str(&fmt_f64(*w));
            s.push(',');
            s.push_str(&fmt_f64(*v));
            s.push('\n');
        }
    }
    s
}

/// Parse [`spectra_to_csv`] output. Consecutive rows with one position form
/// one spectrum.
pub fn spectra_from_csv(text: &str, file: &str, irf_fwhm_nm: f64) -> Result<Vec<PositionedSpectrum>> {
    let rows = parse_csv(text, file, &["position_um", "wavelength_nm", "counts"])?;
    let mut out = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let pos = rows[i][0];
        let mut j = i;
        while j < rows.len() && rows[j][0] == pos {
            j += 1;
        }
        let w = rows[i..j].iter().map(|r| r[1]).collect();
        let v = rows[i..j].iter().map(|r| r[2]).collect();
        let scan = SpectrumScan::new(w, v, SpectrumKind::Intensity).map_err(|e| Error::Parse {
            file: file.to_string(),
            line: 0,
            detail: format!("spectrum at position {pos} µm: {e}"),
        })?;
        out.push(PositionedSpectrum::new(pos, scan, irf_fwhm_nm)?);
        i = j;
    }
    Ok(out)
}

/// Result of running the extraction chain over a set of spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub modes: Vec<ModeRecord>,
    /// Lines dropped as resolution limited.
    pub resolution_limited: usize,
    pub lines_fitted: usize,
}

/// Settings of [`extract_modes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionSettings {
    pub prominence: f64,
    pub max_peaks: usize,
    pub lambda_tol: f64,
    pub z_link_um: f64,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        Self {
            prominence: 0.05,
            max_peaks: 64,
            lambda_tol: 0.5,
            z_link_um: 1.0,
        }
    }
}

/// Fit, deconvolve and group every spectrum.
pub fn extract_modes(spectra: &[PositionedSpectrum], settings: &ExtractionSettings) -> Result<Extraction> {
    let mut lines = Vec::new();
    let mut limited = 0;
    let mut fitted = 0;
    for sp in spectra {
        for r in find_resonances(sp, settings.prominence, settings.max_peaks)? {
            fitted += 1;
            match deconvolve_irf(&r, sp.irf_fwhm_nm) {
                Ok(d) => lines.push(d),
                Err(Error::ResolutionLimited { .. }) => limited += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Extraction {
        modes: group_modes(&lines, settings.lambda_tol, settings.z_link_um),
        resolution_limited: limited,
        lines_fitted: fitted,
    })
}

#[cfg(test)]
mod tests;
