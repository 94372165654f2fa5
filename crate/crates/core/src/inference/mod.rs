//! Truncated log-normal Q-factor likelihoods and grid posteriors over the
//! localization length and the loss.
//!
//! Conventions used throughout:
//!
//! * `µ` and `s` are the mean and standard deviation of the natural log of
//!   the in-plane Q factor `Q0`, evaluated from a [`Calibration`] at `ξ/L`.
//! * A loss length `l` (µm) caps the observable Q at
//!   `Q_l = n_g π l / λ`, and `1/Q = 1/Q0 + 1/Q_l`.
//! * A distributed loss draws `ln l ~ Normal(µ_l, s_l²)` with `l` in µm, so
//!   `ln Q_l ~ Normal(µ_l + ln(n_g π / λ), s_l²)`.

mod posterior;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::error::{domain, Error, Result};
use crate::numeric::quad::{integrate_segments, GaussLegendre};
use crate::numeric::stats::LN_SQRT_2PI;

pub use posterior::{
    loss_length_table, map_estimate, posterior, Axis, AxisSpec, GridSpec, LossTableRow, MapEstimate,
    MapLoss, ModelKind, PosteriorGrid, PosteriorSettings,
};

/// Group index used for the loss Q factor unless stated otherwise.
pub const DEFAULT_GROUP_INDEX: f64 = 3.44;

/// Integration range of the normal factors, in standard deviations.
const TAIL: f64 = 9.0;

/// `Q_l` per µm of loss length.
pub fn loss_q_per_um(wavelength_nm: f64, group_index: f64) -> f64 {
    group_index * PI * 1e3 / wavelength_nm
}

/// `Q_l = n_g π l / λ` with `l` in µm and `λ` in nm.
pub fn loss_q(length_um: f64, wavelength_nm: f64, group_index: f64) -> f64 {
    length_um * loss_q_per_um(wavelength_nm, group_index)
}

/// Total Q of two parallel loss channels, `(1/q0 + 1/q_l)⁻¹`.
pub fn compose_q(q0: f64, q_l: f64) -> f64 {
    if q_l.is_infinite() {
        q0
    } else {
        q0 * q_l / (q0 + q_l)
    }
}

/// The in-plane Q that composes with `q_l` to `q`, or `None` when `q ≥ q_l`.
pub fn inplane_q(q: f64, q_l: f64) -> Option<f64> {
    if q >= q_l {
        None
    } else if q_l.is_infinite() {
        Some(q)
    } else {
        Some(q * q_l / (q_l - q))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    Single { length_um: f64 },
    /// Log-normal loss length: `ln(l / µm) ~ Normal(mu_l, s_l²)`.
    Distributed { mu_l: f64, s_l: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub loss: Loss,
    pub wavelength_nm: f64,
    pub group_index: f64,
}

impl LossModel {
    pub fn single(length_um: f64, wavelength_nm: f64) -> Result<Self> {
        let m = Self {
            loss: Loss::Single { length_um },
            wavelength_nm,
            group_index: DEFAULT_GROUP_INDEX,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn distributed(mu_l: f64, s_l: f64, wavelength_nm: f64) -> Result<Self> {
        let m = Self {
            loss: Loss::Distributed { mu_l, s_l },
            wavelength_nm,
            group_index: DEFAULT_GROUP_INDEX,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_nm > 0.0) || !(self.group_index > 0.0) {
            return Err(domain("loss model needs positive wavelength and group index"));
        }
        match self.loss {
            Loss::Single { length_um } if !(length_um > 0.0) => {
                Err(domain(format!("loss length must be > 0, got {length_um}")))
            }
            Loss::Distributed { mu_l, s_l } if !(s_l > 0.0) || !mu_l.is_finite() => {
                Err(domain(format!("distributed loss needs finite mu_l and s_l > 0, got ({mu_l}, {s_l})")))
            }
            _ => Ok(()),
        }
    }

    pub fn q_per_um(&self) -> f64 {
        loss_q_per_um(self.wavelength_nm, self.group_index)
    }

    /// Loss Q factor of a single-loss model.
    pub fn q_l(&self) -> Result<f64> {
        self.validate()?;
        match self.loss {
            Loss::Single { length_um } => Ok(length_um * self.q_per_um()),
            Loss::Distributed { .. } => Err(domain("a distributed loss has no single Q_l")),
        }
    }
}

/// `(µ, s)` of `ln Q0` at `ξ/L`.
pub fn q0_params(cal: &Calibration, xi_over_l: f64) -> Result<(f64, f64)> {
    if !(xi_over_l > 0.0) || !xi_over_l.is_finite() {
        return Err(domain(format!("xi/L must be positive and finite, got {xi_over_l}")));
    }
    let (mu, s) = (cal.mu(xi_over_l), cal.s(xi_over_l));
    if !(s > 0.0) || !mu.is_finite() {
        return Err(domain(format!("calibration gives mu = {mu}, s = {s} at xi/L = {xi_over_l}")));
    }
    Ok((mu, s))
}

/// `ln p1(q)` for `ln Q0 ~ Normal(µ, s²)` and a fixed `q_l` (may be infinite).
/// Returns `-∞` outside `0 < q < q_l`.
pub fn ln_p1(q: f64, mu: f64, s: f64, q_l: f64) -> f64 {
    if !(q > 0.0) || !(q < q_l) {
        return f64::NEG_INFINITY;
    }
    let lq = q.ln();
    let (ln_q0, ln_jac) = if q_l.is_infinite() {
        (lq, -lq)
    } else {
        let lql = q_l.ln();
        let ld = (q_l - q).ln();
        // dQ0/dQ / Q0 = Q_l / (Q (Q_l - Q))
        (lq + lql - ld, lql - lq - ld)
    };
    let z = (ln_q0 - mu) / s;
    -0.5 * z * z - s.ln() - LN_SQRT_2PI + ln_jac
}

/// Density of the observed Q for a single loss length: the log-normal
/// in-plane distribution pushed through `1/Q = 1/Q0 + 1/Q_l`, which is
/// zero for `q ≥ Q_l`.
pub fn p1_density(q: f64, xi_over_l: f64, loss: &LossModel, cal: &Calibration) -> Result<f64> {
    if !(q > 0.0) {
        return Err(domain(format!("Q must be > 0, got {q}")));
    }
    let q_l = loss.q_l()?;
    let (mu, s) = q0_params(cal, xi_over_l)?;
    Ok(ln_p1(q, mu, s, q_l).exp())
}

/// Draw from `p1`: a log-normal in-plane Q composed with `q_l`. Samples
/// never reach `q_l`.
pub fn sample_p1<R: Rng + ?Sized>(rng: &mut R, mu: f64, s: f64, q_l: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    compose_q((mu + s * z).exp(), q_l)
}

/// `n` draws from `p1` with a deterministic ChaCha stream.
pub fn sample_p1_seeded(n: usize, mu: f64, s: f64, q_l: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_p1(&mut rng, mu, s, q_l)).collect()
}

/// Draws of the observed Q under a log-normal loss length.
pub fn sample_distributed(
    n: usize,
    mu: f64,
    s: f64,
    mu_l: f64,
    s_l: f64,
    q_per_um: f64,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let q_l = q_per_um * (mu_l + s_l * z).exp();
            sample_p1(&mut rng, mu, s, q_l)
        })
        .collect()
}

/// Add independent Gaussian errors `N(0, σ_i²)` to each value, redrawing any
/// result that is not positive.
pub fn add_measurement_noise(q: &[f64], sigma: &[f64], seed: u64) -> Result<Vec<f64>> {
    if q.len() != sigma.len() {
        return Err(domain("Q and sigma columns differ in length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    q.iter()
        .zip(sigma)
        .map(|(&v, &s)| {
            if !(v > 0.0) || !(s >= 0.0) || !(s < v) {
                return Err(domain(format!("cannot perturb Q = {v} with sigma = {s}")));
            }
            loop {
                let z: f64 = rng.sample(StandardNormal);
                let x = v + s * z;
                if x > 0.0 {
                    return Ok(x);
                }
            }
        })
        .collect()
}

/// `t` such that the observed Q equals `q` when `ln Q0 = µ + s t`.
fn t_of_q(q: f64, mu: f64, s: f64, q_l: f64) -> f64 {
    if q <= 0.0 {
        return f64::NEG_INFINITY;
    }
    match inplane_q(q, q_l) {
        Some(q0) => (q0.ln() - mu) / s,
        None => f64::INFINITY,
    }
}

/// `ln ∫ p1(Q) Normal(q_meas - Q; 0, σ) dQ`.
///
/// The integral is taken over the standard-normal variable of `ln Q0`,
/// restricted to where the measurement kernel is within `9σ` of `q_meas`.
/// `σ = 0` reduces to `ln p1(q_meas)`.
pub fn ln_likelihood_single(q_meas: f64, sigma: f64, mu: f64, s: f64, q_l: f64) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(domain(format!("sigma_q must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(ln_p1(q_meas, mu, s, q_l));
    }
    let a = (q_meas - TAIL * sigma).max(0.0);
    let b = (q_meas + TAIL * sigma).min(q_l);
    if !(a < b) {
        return Ok(f64::NEG_INFINITY);
    }
    let t_lo = t_of_q(a, mu, s, q_l).max(-TAIL - 3.0);
    let t_hi = t_of_q(b, mu, s, q_l).min(TAIL + 3.0);
    if !(t_lo < t_hi) {
        return Ok(f64::NEG_INFINITY);
    }
    let inv = 1.0 / sigma;
    let log_f = |t: f64| {
        let q = compose_q((mu + s * t).exp(), q_l);
        let r = (q_meas - q) * inv;
        -0.5 * (t * t + r * r)
    };
    let mut breaks = vec![t_lo];
    for t in [t_of_q(q_meas, mu, s, q_l), 0.0] {
        if t > t_lo && t < t_hi {
            breaks.push(t);
        }
    }
    breaks.push(t_hi);
    breaks.sort_by(f64::total_cmp);
    // scale by the largest sampled log value so deep tails stay finite
    let shift = breaks.iter().map(|&t| log_f(t)).fold(f64::NEG_INFINITY, f64::max);
    let mut f = |t: f64| (log_f(t) - shift).exp();
    // rounding in q_meas - Q limits the attainable accuracy when σ ≪ Q
    let rel = (1e-10f64).max(100.0 * f64::EPSILON * q_meas / sigma);
    let r = integrate_segments(&mut f, &breaks, 0.0, rel, 400).map_err(|e| {
        Error::Integration(format!(
            "single-loss likelihood at q = {q_meas}, sigma = {sigma}, mu = {mu}, s = {s}, Q_l = {q_l}: {e}"
        ))
    })?;
    // φ(t) and the measurement kernel contribute 1/(2π σ)
    Ok(r.value.ln() + shift - 2.0 * LN_SQRT_2PI - sigma.ln())
}

/// Likelihood of one measured Q with Gaussian uncertainty.
pub fn likelihood_single_loss(
    q_meas: f64,
    sigma_q: f64,
    xi_over_l: f64,
    loss: &LossModel,
    cal: &Calibration,
) -> Result<f64> {
    if !(sigma_q > 0.0) {
        return Err(domain(format!("sigma_q must be > 0, got {sigma_q}")));
    }
    let q_l = loss.q_l()?;
    let (mu, s) = q0_params(cal, xi_over_l)?;
    Ok(ln_likelihood_single(q_meas, sigma_q, mu, s, q_l)?.exp())
}

/// Density of `Q_l` when `ln(l / µm) ~ Normal(µ_l, s_l²)`. With
/// `Q_l = c l`, `ln Q_l ~ Normal(µ_l + ln c, s_l²)` and the density carries
/// the `1/Q_l` Jacobian of the log-normal.
pub fn p3_density(q_l: f64, mu_l: f64, s_l: f64, wavelength_nm: f64, group_index: f64) -> Result<f64> {
    if !(q_l > 0.0) || !(s_l > 0.0) || !(wavelength_nm > 0.0) || !(group_index > 0.0) {
        return Err(domain("p3 needs Q_l > 0, s_l > 0 and a positive wavelength and group index"));
    }
    let m = mu_l + loss_q_per_um(wavelength_nm, group_index).ln();
    let z = (q_l.ln() - m) / s_l;
    Ok((-0.5 * z * z - s_l.ln() - LN_SQRT_2PI - q_l.ln()).exp())
}

/// Mean loss length `exp(µ_l + s_l²/2)`, µm.
pub fn mean_loss_length(mu_l: f64, s_l: f64) -> Result<f64> {
    if !(s_l >= 0.0) {
        return Err(domain(format!("s_l must be >= 0, got {s_l}")));
    }
    Ok((mu_l + 0.5 * s_l * s_l).exp())
}

/// Solve `ln q + ln(q + e^u) - u = target` for `u`; `None` when the left side
/// never reaches `target` (it decreases from `+∞` to `ln q`).
fn u_for_ln_q0(q: f64, ln_q: f64, target: f64) -> Option<f64> {
    let r = q * (-target).exp();
    (r < 1.0).then(|| 2.0 * ln_q - (target + (-r).ln_1p()))
}

/// `u = ln(e^target - q)`, `None` when `e^target ≤ q`.
fn u_for_ln_ql(q: f64, target: f64) -> Option<f64> {
    let r = q * (-target).exp();
    (r < 1.0).then(|| target + (-r).ln_1p())
}

/// `ln ∫ p1(q | Q_l) p3(Q_l) dQ_l` with `ln Q_l ~ Normal(m_l, s_l²)`.
///
/// Integrated over `u = ln(Q_l − q)`, which keeps `Q_l − q` free of
/// cancellation and turns both factors into smooth bumps. The range is cut to
/// where both normal exponents are within `9` standard deviations and split
/// at the peak of each factor; each piece uses the given Gauss–Legendre rule.
pub fn ln_likelihood_distributed(
    q: f64,
    mu: f64,
    s: f64,
    m_l: f64,
    s_l: f64,
    rule: &GaussLegendre,
) -> f64 {
    if !(q > 0.0) {
        return f64::NEG_INFINITY;
    }
    let lq = q.ln();
    let Some(u1) = u_for_ln_q0(q, lq, mu + TAIL * s) else {
        return f64::NEG_INFINITY;
    };
    let u2 = u_for_ln_q0(q, lq, mu - TAIL * s).unwrap_or(f64::INFINITY);
    let Some(u3) = u_for_ln_ql(q, m_l + TAIL * s_l) else {
        return f64::NEG_INFINITY;
    };
    let u4 = u_for_ln_ql(q, m_l - TAIL * s_l).unwrap_or(f64::NEG_INFINITY);
    let lo = u1.max(u4);
    let hi = u2.min(u3);
    if !(lo < hi) {
        return f64::NEG_INFINITY;
    }
    let log_f = |u: f64| {
        let lql = (q + u.exp()).ln();
        let z1 = (lq + lql - u - mu) / s;
        let z2 = (lql - m_l) / s_l;
        -0.5 * (z1 * z1 + z2 * z2)
    };
    let mut breaks = [lo, hi, hi, hi, hi];
    let mut nb = 1;
    for c in [u_for_ln_q0(q, lq, mu), u_for_ln_ql(q, m_l), Some(lq)].into_iter().flatten() {
        if c > lo && c < hi {
            breaks[nb] = c;
            nb += 1;
        }
    }
    breaks[nb] = hi;
    let breaks = &mut breaks[..=nb];
    breaks.sort_by(f64::total_cmp);
    let n = rule.nodes.len();
    let mut vals = Vec::with_capacity(n * nb);
    let mut shift = f64::NEG_INFINITY;
    for w in breaks.windows(2) {
        let (c, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        for (x, wt) in rule.nodes.iter().zip(&rule.weights) {
            let v = log_f(c + h * x);
            shift = shift.max(v);
            vals.push((v, wt * h));
        }
    }
    if !shift.is_finite() {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = vals.iter().map(|(v, w)| w * (v - shift).exp()).sum();
    // p1 p3 e^u = exp(-(z1² + z2²)/2) / (2π s s_l q)
    sum.ln() + shift - 2.0 * LN_SQRT_2PI - s.ln() - s_l.ln() - lq
}

/// Likelihood of one Q factor when the loss length is log-normally
/// distributed, with the measurement taken as exact.
pub fn likelihood_distributed_loss(
    q_meas: f64,
    xi_over_l: f64,
    loss: &LossModel,
    cal: &Calibration,
) -> Result<f64> {
    likelihood_distributed_loss_with(q_meas, xi_over_l, loss, cal, GaussLegendre::n64())
}

/// [`likelihood_distributed_loss`] with an explicit quadrature rule.
pub fn likelihood_distributed_loss_with(
    q_meas: f64,
    xi_over_l: f64,
    loss: &LossModel,
    cal: &Calibration,
    rule: &GaussLegendre,
) -> Result<f64> {
    if !(q_meas > 0.0) {
        return Err(domain(format!("Q must be > 0, got {q_meas}")));
    }
    loss.validate()?;
    let Loss::Distributed { mu_l, s_l } = loss.loss else {
        return Err(domain("distributed-loss likelihood needs a distributed loss model"));
    };
    let (mu, s) = q0_params(cal, xi_over_l)?;
    let m_l = mu_l + loss.q_per_um().ln();
    Ok(ln_likelihood_distributed(q_meas, mu, s, m_l, s_l, rule).exp())
}

#[cfg(test)]
mod tests;
