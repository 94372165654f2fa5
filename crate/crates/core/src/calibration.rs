//! Monte Carlo power laws linking `ξ/L` to the index disorder `Δn` and to the
//! log-normal parameters `(µ, s)` of the in-plane Q factors.
//!
//! Localization lengths come from `ξ = −L / ⟨ln T⟩` with index-matched leads,
//! so the interfaces to the surroundings add no transmission loss of their
//! own. In-plane Q factors are the complex-wavenumber resonances of the
//! lossless open stack, `Q = Re k / (2 |Im k|)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numeric::stats::{ks_test, mean, normal_cdf, std_dev, KsTest};
use crate::stack::{generate_stack, realization_seed, StackSpec};
use crate::wave::{Pole, WaveSolver};

/// Version tag written into calibration files.
pub const CALIBRATION_VERSION: u32 = 1;

/// Default `ξ/L` grid of a calibration run.
pub const DEFAULT_GRID: [f64; 4] = [0.03, 0.06, 0.12, 0.24];

/// `y = amplitude · x^exponent`, fitted by ordinary least squares on
/// `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub amplitude: f64,
    pub exponent: f64,
    pub amplitude_err: f64,
    pub exponent_err: f64,
    pub sample_count: usize,
    /// Smallest and largest abscissa used in the fit; `(0, f64::MAX)` for
    /// fixed laws.
    pub x_range: (f64, f64),
}

impl PowerLawFit {
    /// A law with given coefficients and errors, not backed by data.
    pub fn fixed(amplitude: f64, exponent: f64, amplitude_err: f64, exponent_err: f64) -> Self {
        Self {
            amplitude,
            exponent,
            amplitude_err,
            exponent_err,
            sample_count: 0,
            x_range: (0.0, f64::MAX),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * x.powf(self.exponent)
    }
}

/// Log-log least squares. Standard errors use the residual variance with
/// `n − 2` degrees of freedom; the amplitude error is propagated from the
/// intercept error.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.len() != y.len() {
        return Err(domain("power-law fit needs equally many x and y values"));
    }
    if x.len() < 3 {
        return Err(domain("power-law fit needs at least 3 points"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(domain("power-law fit needs positive finite data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxx: f64 = lx.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(domain("power-law fit needs at least two distinct x values"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let s2 = rss / (n - 2.0);
    let slope_err = (s2 / sxx).sqrt();
    let intercept_err = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
    let amplitude = intercept.exp();
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(PowerLawFit {
        amplitude,
        exponent: slope,
        amplitude_err: amplitude * intercept_err,
        exponent_err: slope_err,
        sample_count: x.len(),
        x_range: (lo, hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiEstimate {
    pub xi_um: f64,
    pub xi_err_um: f64,
    pub mean_ln_t: f64,
    /// Standard error of `mean_ln_t`.
    pub ln_t_err: f64,
    pub delta_n: f64,
    pub wavelength_nm: f64,
    pub realizations: usize,
}

impl XiEstimate {
    pub fn xi_over_l(&self, sample_length_um: f64) -> f64 {
        self.xi_um / sample_length_um
    }
}

fn scattering_spec(spec: &StackSpec, delta_n: f64) -> Result<StackSpec> {
    let s = StackSpec {
        loss_length_um: None,
        ..spec.clone()
    }
    .with_delta_n(delta_n);
    s.validate()?;
    Ok(s)
}

/// `ln T` of realizations `0..realizations` under `master_seed`, in order.
/// Loss in `spec` is ignored: the localization length is the
/// multiple-scattering decay alone.
pub fn ln_transmission_samples(
    spec: &StackSpec,
    delta_n: f64,
    realizations: usize,
    wavelength_nm: f64,
    master_seed: u64,
) -> Result<Vec<f64>> {
    let s = scattering_spec(spec, delta_n)?;
    let n0 = s.mean_index;
    (0..realizations)
        .into_par_iter()
        .map(|i| {
            let stack = generate_stack(&s, realization_seed(master_seed, i as u64))?;
            WaveSolver::new(&stack).with_boundaries(n0, n0).ln_transmission(wavelength_nm)
        })
        .collect()
}

/// Localization length from the ensemble mean of `ln T`.
pub fn xi_from_dn(
    spec: &StackSpec,
    delta_n: f64,
    realizations: usize,
    wavelength_nm: f64,
    master_seed: u64,
) -> Result<XiEstimate> {
    if !(delta_n >= 0.0) {
        return Err(domain(format!("delta_n must be >= 0, got {delta_n}")));
    }
    if realizations < 100 {
        return Err(domain(format!("at least 100 realizations required, got {realizations}")));
    }
    let lnt = ln_transmission_samples(spec, delta_n, realizations, wavelength_nm, master_seed)?;
    let m = mean(&lnt);
    let err = std_dev(&lnt) / (realizations as f64).sqrt();
    // a decay indistinguishable from zero says nothing about ξ
    if !(-m > 1e-12) || -m < 2.0 * err {
        return Err(Error::CalibrationRange(format!(
            "no measurable decay at delta_n = {delta_n}: <ln T> = {m:.3e} ± {err:.1e}"
        )));
    }
    let l = spec.sample_length_um;
    Ok(XiEstimate {
        xi_um: -l / m,
        xi_err_um: l * err / (m * m),
        mean_ln_t: m,
        ln_t_err: err,
        delta_n,
        wavelength_nm,
        realizations,
    })
}

/// Result of inverting `ξ(Δn)` on a set of targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnLaw {
    pub fit: PowerLawFit,
    /// `(ξ/L target, Δn found, ξ/L measured at that Δn)`.
    pub points: Vec<(f64, f64, f64)>,
}

/// Find `Δn` with `ξ(Δn) = xi_target_um` by bracketing and Illinois
/// regula falsi on `ln Δn`. Every evaluation reuses `master_seed`, so the
/// target function is a fixed deterministic curve.
pub fn solve_delta_n(
    spec: &StackSpec,
    xi_target_um: f64,
    realizations: usize,
    wavelength_nm: f64,
    master_seed: u64,
) -> Result<(f64, XiEstimate)> {
    if !(xi_target_um > 0.0) {
        return Err(domain("target localization length must be positive"));
    }
    let cap = spec.mean_index * 0.999;
    let g = |ln_dn: f64| -> Result<(f64, Option<XiEstimate>)> {
        match xi_from_dn(spec, ln_dn.exp(), realizations, wavelength_nm, master_seed) {
            Ok(e) => Ok(((e.xi_um / xi_target_um).ln(), Some(e))),
            // too little disorder to decay: ξ is effectively beyond any target
            Err(Error::CalibrationRange(_)) => Ok((f64::INFINITY, None)),
            Err(e) => Err(e),
        }
    };
    // weak-scattering scaling ξ ∝ Δn⁻² from a probe at Δn = 0.5
    let probe = 0.5f64.min(cap);
    let (gp, _) = g(probe.ln())?;
    let mut a = if gp.is_finite() { probe.ln() + 0.5 * gp } else { probe.ln() };
    a = a.min(cap.ln());
    let (mut ga, mut ea) = g(a)?;
    let step = 0.4;
    let mut b = a;
    let mut gb = ga;
    for _ in 0..24 {
        if ga == 0.0 {
            return Ok((a.exp(), ea.expect("finite value has an estimate")));
        }
        let next = if ga > 0.0 { b + step } else { b - step };
        if next > cap.ln() + 1e-12 {
            break;
        }
        let (gn, en) = g(next)?;
        b = next;
        gb = gn;
        if gb.signum() != ga.signum() {
            break;
        }
        a = b;
        ga = gb;
        ea = en;
    }
    if gb.signum() == ga.signum() || !(ga.is_finite() || gb.is_finite()) {
        return Err(Error::CalibrationRange(format!(
            "could not bracket xi = {xi_target_um} um with delta_n below {cap}"
        )));
    }
    // an infinite endpoint is replaced by bisection until it becomes finite
    let mut side = 0i8;
    for _ in 0..80 {
        let c = if ga.is_finite() && gb.is_finite() {
            (a * gb - b * ga) / (gb - ga)
        } else {
            0.5 * (a + b)
        };
        let (gc, ec) = g(c)?;
        if gc.abs() < 1e-4 || (b - a).abs() < 1e-10 {
            if let Some(e) = ec {
                return Ok((c.exp(), e));
            }
        }
        if gc.signum() == ga.signum() {
            a = c;
            ga = gc;
            if side == -1 && gb.is_finite() {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = c;
            gb = gc;
            if side == 1 && ga.is_finite() {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::CalibrationRange(format!(
        "root search for xi = {xi_target_um} um did not converge"
    )))
}

/// Invert `ξ(Δn)` at each target and fit `Δn = A (ξ/L)^β` to the results.
/// Targets are in µm.
pub fn fit_dn_law(
    spec: &StackSpec,
    xi_targets_um: &[f64],
    realizations: usize,
    wavelength_nm: f64,
    master_seed: u64,
) -> Result<DnLaw> {
    check_grid(xi_targets_um)?;
    let l = spec.sample_length_um;
    let mut points = Vec::with_capacity(xi_targets_um.len());
    for &t in xi_targets_um {
        let (dn, est) = solve_delta_n(spec, t, realizations, wavelength_nm, master_seed)?;
        points.push((t / l, dn, est.xi_um / l));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.2).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(DnLaw {
        fit: fit_power_law(&xs, &ys)?,
        points,
    })
}

fn check_grid(values: &[f64]) -> Result<()> {
    if values.len() < 4 {
        return Err(domain(format!("at least 4 grid points required, got {}", values.len())));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(domain("grid values must be positive"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi < 4.0 * lo {
        return Err(domain(format!("grid must span a factor of 4, spans {:.3}", hi / lo)));
    }
    Ok(())
}

/// How resonances of a single realization are located.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResonanceSearch {
    /// Step of the coarse transmission scan that seeds the pole search, nm.
    pub coarse_step_nm: f64,
    /// Index of the leads; `None` matches them to the mean layer index.
    pub lead_index: Option<f64>,
}

impl Default for ResonanceSearch {
    fn default() -> Self {
        Self {
            coarse_step_nm: 0.05,
            lead_index: None,
        }
    }
}

/// Resonances of one lossless realization with centers inside `λ_range`.
///
/// Seeds are local maxima of `ln T` and abrupt phase jumps of `t` on the
/// coarse grid; each seed is refined to a pole of the scattering matrix and
/// duplicates are removed.
pub fn realization_poles(
    solver: &WaveSolver<'_>,
    lambda_range: (f64, f64),
    coarse_step_nm: f64,
) -> Result<Vec<Pole>> {
    let (lo, hi) = lambda_range;
    let n = ((hi - lo) / coarse_step_nm).ceil() as usize + 1;
    let h = (hi - lo) / (n - 1) as f64;
    let lam: Vec<f64> = (0..n).map(|j| lo + h * j as f64).collect();
    let rs = lam
        .iter()
        .map(|&l| solver.response(l))
        .collect::<Result<Vec<_>>>()?;
    let mut seeds = Vec::new();
    for j in 0..n {
        let up = j == 0 || rs[j].ln_transmission > rs[j - 1].ln_transmission;
        let down = j + 1 == n || rs[j].ln_transmission >= rs[j + 1].ln_transmission;
        if up && down {
            seeds.push((lam[j], h));
        }
    }
    for j in 0..n - 1 {
        // narrow resonances hidden between grid points still flip the phase
        if (rs[j + 1].t / rs[j].t).arg().abs() > 1.2 {
            seeds.push((0.5 * (lam[j] + lam[j + 1]), 0.05 * h));
        }
    }
    let mut poles: Vec<Pole> = Vec::new();
    for (l, w) in seeds {
        let Some(p) = solver.find_pole(l, w)? else {
            continue;
        };
        if !(lo..=hi).contains(&p.wavelength_nm) {
            continue;
        }
        let dup = poles
            .iter()
            .any(|q| (q.k0 - p.k0).norm() < 1e-9 * p.k0.norm() + 0.1 * p.k0.im.abs());
        if !dup {
            poles.push(p);
        }
    }
    poles.sort_by(|a, b| a.wavelength_nm.total_cmp(&b.wavelength_nm));
    Ok(poles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSamples {
    /// Pooled Q values in realization order.
    pub q: Vec<f64>,
    /// Number of resonances found per realization.
    pub per_realization: Vec<usize>,
}

impl QSamples {
    pub fn realizations_with_modes(&self) -> usize {
        self.per_realization.iter().filter(|&&c| c > 0).count()
    }
}

/// Pooled in-plane Q factors of a lossless ensemble.
pub fn inplane_q_samples(
    spec: &StackSpec,
    delta_n: f64,
    lambda_range: (f64, f64),
    realizations: usize,
    master_seed: u64,
    search: &ResonanceSearch,
) -> Result<QSamples> {
    if spec.loss_length().is_some() {
        return Err(domain("in-plane Q factors need a lossless stack"));
    }
    if realizations < 100 {
        return Err(domain(format!("at least 100 realizations required, got {realizations}")));
    }
    let (lo, hi) = lambda_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(domain(format!("invalid wavelength range ({lo}, {hi})")));
    }
    if !(search.coarse_step_nm > 0.0) || search.coarse_step_nm > 0.5 * (hi - lo) {
        return Err(domain("coarse scan step must be positive and below half the range"));
    }
    let s = spec.clone().with_delta_n(delta_n);
    s.validate()?;
    let lead = search.lead_index.unwrap_or(s.mean_index);
    let per: Vec<Vec<f64>> = (0..realizations)
        .into_par_iter()
        .map(|i| {
            let stack = generate_stack(&s, realization_seed(master_seed, i as u64))?;
            let solver = WaveSolver::new(&stack).with_boundaries(lead, lead);
            let poles = realization_poles(&solver, lambda_range, search.coarse_step_nm)?;
            Ok(poles.iter().map(|p| p.q).collect())
        })
        .collect::<Result<_>>()?;
    let out = QSamples {
        per_realization: per.iter().map(Vec::len).collect(),
        q: per.into_iter().flatten().collect(),
    };
    if 2 * out.realizations_with_modes() < realizations {
        return Err(Error::UnderResolved(format!(
            "resonances found in only {} of {realizations} realizations; use a finer scan step than {} nm",
            out.realizations_with_modes(),
            search.coarse_step_nm
        )));
    }
    Ok(out)
}

/// Sample mean and standard deviation of `ln Q` with a KS test against the
/// fitted normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalSummary {
    pub mu: f64,
    pub s: f64,
    pub ks: KsTest,
}

pub fn lognormal_summary(q: &[f64]) -> Result<LogNormalSummary> {
    if q.len() < 2 {
        return Err(Error::EmptyDataset("need at least two Q values".into()));
    }
    if q.iter().any(|v| !(*v > 0.0)) {
        return Err(domain("Q values must be positive"));
    }
    let l: Vec<f64> = q.iter().map(|v| v.ln()).collect();
    let (mu, s) = (mean(&l), std_dev(&l));
    let ks = ks_test(&l, |v| normal_cdf(v, mu, s));
    Ok(LogNormalSummary { mu, s, ks })
}

/// Fit `µ = A (ξ/L)^a` and `s = B (ξ/L)^b` to `(ξ/L, µ, s)` points.
pub fn fit_q0_laws(points: &[(f64, f64, f64)]) -> Result<(PowerLawFit, PowerLawFit)> {
    if points.len() < 4 {
        return Err(domain(format!("at least 4 calibration points required, got {}", points.len())));
    }
    if points.iter().any(|p| !(p.0 > 0.0 && p.1 > 0.0 && p.2 > 0.0)) {
        return Err(domain("calibration points need positive xi/L, mu and s"));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let mu: Vec<f64> = points.iter().map(|p| p.1).collect();
    let s: Vec<f64> = points.iter().map(|p| p.2).collect();
    Ok((fit_power_law(&x, &mu)?, fit_power_law(&x, &s)?))
}

/// One grid point of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub xi_over_l_target: f64,
    pub delta_n: f64,
    pub xi_over_l: f64,
    pub xi_over_l_err: f64,
    pub mu: f64,
    pub s: f64,
    pub q_count: usize,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    pub grid: Vec<f64>,
    pub xi_realizations: usize,
    pub q_realizations: usize,
    pub wavelength_nm: f64,
    pub lambda_range: (f64, f64),
    pub search: ResonanceSearch,
    pub master_seed: u64,
    pub keep_samples: bool,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID.to_vec(),
            xi_realizations: 1000,
            q_realizations: 1000,
            wavelength_nm: 950.0,
            lambda_range: (947.5, 952.5),
            search: ResonanceSearch::default(),
            master_seed: 1,
            keep_samples: false,
        }
    }
}

/// Fitted laws plus the run that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub mu_law: PowerLawFit,
    pub s_law: PowerLawFit,
    pub dn_law: PowerLawFit,
    pub reference: StackSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<CalibrationSettings>,
    #[serde(default)]
    pub points: Vec<CalibrationPoint>,
    /// Raw in-plane Q values per grid point, when kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0_samples: Option<Vec<Vec<f64>>>,
}

impl Calibration {
    /// The nominal laws `µ = 5.9 (ξ/L)^−0.22`, `s = 0.4 (ξ/L)^−0.59` and
    /// `Δn = 0.22 (ξ/L)^−0.55` for the default stack.
    pub fn reference() -> Self {
        Self {
            version: CALIBRATION_VERSION,
            mu_law: PowerLawFit::fixed(5.9, -0.22, 0.3, 0.01),
            s_law: PowerLawFit::fixed(0.4, -0.59, 0.2, 0.01),
            dn_law: PowerLawFit::fixed(0.22, -0.55, 0.03, 0.01),
            reference: StackSpec::default(),
            settings: None,
            points: Vec::new(),
            q0_samples: None,
        }
    }

    pub fn mu(&self, xi_over_l: f64) -> f64 {
        self.mu_law.eval(xi_over_l)
    }

    pub fn s(&self, xi_over_l: f64) -> f64 {
        self.s_law.eval(xi_over_l)
    }

    pub fn delta_n(&self, xi_over_l: f64) -> f64 {
        self.dn_law.eval(xi_over_l)
    }

    /// Sample length the laws were computed for, µm.
    pub fn sample_length_um(&self) -> f64 {
        self.reference.sample_length_um
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Calibration = serde_json::from_str(text)?;
        if c.version != CALIBRATION_VERSION {
            return Err(domain(format!(
                "unsupported calibration version {} (expected {CALIBRATION_VERSION})",
                c.version
            )));
        }
        for law in [&c.mu_law, &c.s_law, &c.dn_law] {
            if !(law.amplitude > 0.0) || !law.exponent.is_finite() {
                return Err(domain("calibration laws need positive amplitudes and finite exponents"));
            }
        }
        Ok(c)
    }
}

/// Full calibration: for every `ξ/L` on the grid, find `Δn`, pool in-plane
/// Q factors at that disorder and fit the three power laws.
///
/// `ξ/L` enters the µ and s fits as measured at the `Δn` found, not as the
/// nominal target.
pub fn run_calibration(spec: &StackSpec, settings: &CalibrationSettings) -> Result<Calibration> {
    check_grid(&settings.grid)?;
    let base = StackSpec {
        loss_length_um: None,
        ..spec.clone()
    };
    base.validate()?;
    let l = base.sample_length_um;
    let xi_seed = realization_seed(settings.master_seed, 0x5849);
    let mut points = Vec::new();
    let mut samples = Vec::new();
    for (i, &x) in settings.grid.iter().enumerate() {
        log::info!("calibrating xi/L = {x}");
        let (dn, est) = solve_delta_n(&base, x * l, settings.xi_realizations, settings.wavelength_nm, xi_seed)?;
        let qs = inplane_q_samples(
            &base,
            dn,
            settings.lambda_range,
            settings.q_realizations,
            realization_seed(settings.master_seed, i as u64 + 1),
            &settings.search,
        )?;
        let sum = lognormal_summary(&qs.q)?;
        points.push(CalibrationPoint {
            xi_over_l_target: x,
            delta_n: dn,
            xi_over_l: est.xi_um / l,
            xi_over_l_err: est.xi_err_um / l,
            mu: sum.mu,
            s: sum.s,
            q_count: qs.q.len(),
            ks_statistic: sum.ks.statistic,
            ks_p_value: sum.ks.p_value,
        });
        samples.push(qs.q);
    }
    let triples: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.xi_over_l, p.mu, p.s)).collect();
    let (mu_law, s_law) = fit_q0_laws(&triples)?;
    let xs: Vec<f64> = points.iter().map(|p| p.xi_over_l).collect();
    let dns: Vec<f64> = points.iter().map(|p| p.delta_n).collect();
    let dn_law = fit_power_law(&xs, &dns)?;
    Ok(Calibration {
        version: CALIBRATION_VERSION,
        mu_law,
        s_law,
        dn_law,
        reference: base,
        settings: Some(settings.clone()),
        points,
        q0_samples: settings.keep_samples.then_some(samples),
    })
}
