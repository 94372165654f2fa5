use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ln_likelihood_distributed, ln_likelihood_single, loss_q_per_um, mean_loss_length, q0_params,
    DEFAULT_GROUP_INDEX,
};
use crate::calibration::Calibration;
use crate::error::{domain, Error, Result};
use crate::io::fmt_f64;
use crate::numeric::quad::GaussLegendre;
use crate::numeric::stats::{log_sum_exp, LN_SQRT_2PI};
use crate::spectra::QDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One loss length shared by all modes; axes `(ξ, l)`.
    Single,
    /// Log-normal loss length; axes `(ξ, µ_l, s_l)`.
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    /// Geometric rather than arithmetic spacing.
    pub log: bool,
}

impl AxisSpec {
    pub const fn new(min: f64, max: f64, points: usize, log: bool) -> Self {
        Self { min, max, points, log }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let ok = self.points >= 2
            && self.min.is_finite()
            && self.max.is_finite()
            && self.max > self.min
            && (!self.log || self.min > 0.0);
        if !ok {
            return Err(domain(format!("invalid grid axis {self:?}")));
        }
        let n = self.points - 1;
        Ok((0..=n)
            .map(|i| {
                let f = i as f64 / n as f64;
                if i == n {
                    self.max
                } else if self.log {
                    (self.min.ln() + f * (self.max.ln() - self.min.ln())).exp()
                } else {
                    self.min + f * (self.max - self.min)
                }
            })
            .collect())
    }
}

/// Parameter grids. `xi_um` is shared by both models; `loss_um` belongs to
/// the single-loss model and `mu_l`, `s_l` to the distributed one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub xi_um: AxisSpec,
    pub loss_um: AxisSpec,
    pub mu_l: AxisSpec,
    pub s_l: AxisSpec,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            xi_um: AxisSpec::new(1.0, 100.0, 64, true),
            loss_um: AxisSpec::new(50.0, 5000.0, 64, true),
            mu_l: AxisSpec::new(50f64.ln(), 5000f64.ln(), 48, false),
            s_l: AxisSpec::new(0.05, 2.0, 32, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosteriorSettings {
    pub model: ModelKind,
    pub grids: GridSpec,
    /// Wavelength for `Q_l`; defaults to the middle of the dataset's range.
    pub wavelength_nm: Option<f64>,
    pub group_index: f64,
}

impl Default for PosteriorSettings {
    fn default() -> Self {
        Self {
            model: ModelKind::Single,
            grids: GridSpec::default(),
            wavelength_nm: None,
            group_index: DEFAULT_GROUP_INDEX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

/// Normalized log posterior on a rectangular grid, stored row-major with the
/// first axis (`xi_um`) slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub model: ModelKind,
    pub axes: Vec<Axis>,
    /// Cells with zero likelihood hold `-∞`, written as `null` in JSON.
    #[serde(with = "neg_inf_as_null")]
    pub log_posterior: Vec<f64>,
    /// Log of the sum of the unnormalized posterior over the grid.
    pub log_normalization: f64,
    pub sample_length_um: f64,
    pub wavelength_nm: f64,
    pub group_index: f64,
    pub data_count: usize,
}

impl PosteriorGrid {
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.values.len()).collect()
    }

    /// Multi-index of a flat cell index.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        for (d, &n) in shape.iter().enumerate().rev() {
            idx[d] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_posterior.iter().map(|v| v.exp()).collect()
    }

    /// Posterior mass per value of one axis.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.axes[axis].values.len()];
        for (i, p) in self.probabilities().into_iter().enumerate() {
            out[self.unravel(i)[axis]] += p;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: PosteriorGrid = serde_json::from_str(text)?;
        let cells: usize = g.shape().iter().product();
        if cells != g.log_posterior.len() {
            return Err(domain(format!(
                "posterior has {} values for {cells} grid cells",
                g.log_posterior.len()
            )));
        }
        Ok(g)
    }

    /// One row per cell: axis values followed by the log posterior.
    pub fn to_csv(&self) -> String {
        let mut out: String = self.axes.iter().map(|a| a.name.as_str()).collect::<Vec<_>>().join(",");
        out.push_str(",log_posterior\n");
        for (i, lp) in self.log_posterior.iter().enumerate() {
            for (a, &j) in self.axes.iter().zip(&self.unravel(i)) {
                out.push_str(&fmt_f64(a.values[j]));
                out.push(',');
            }
            out.push_str(&fmt_f64(*lp));
            out.push('\n');
        }
        out
    }
}

mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let o: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        o.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let o: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(o.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

/// Grid posterior of a Q dataset under a flat prior over the grid cells.
///
/// Data are sorted before the log likelihoods are summed, so any
/// permutation of the dataset yields the same bits.
pub fn posterior(dataset: &QDataset, cal: &Calibration, settings: &PosteriorSettings) -> Result<PosteriorGrid> {
    dataset.validate()?;
    let wavelength_nm = match settings.wavelength_nm {
        Some(w) => w,
        None => 0.5 * (dataset.lambda_range.0 + dataset.lambda_range.1),
    };
    if !(wavelength_nm > 0.0) || !(settings.group_index > 0.0) {
        return Err(domain("posterior needs a positive wavelength and group index"));
    }
    let mut data: Vec<(f64, f64)> = dataset.q.iter().copied().zip(dataset.sigma_q.iter().copied()).collect();
    data.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let l = dataset.sample_length_um;
    let g = &settings.grids;
    let xi = g.xi_um.values()?;
    let params: Vec<(f64, f64)> = xi.iter().map(|&x| q0_params(cal, x / l)).collect::<Result<_>>()?;
    let c = loss_q_per_um(wavelength_nm, settings.group_index);

    let (axes, ll): (Vec<Axis>, Vec<f64>) = match settings.model {
        ModelKind::Single => {
            let loss = g.loss_um.values()?;
            let nl = loss.len();
            let ll = (0..xi.len() * nl)
                .into_par_iter()
                .map(|cell| {
                    let (mu, s) = params[cell / nl];
                    let q_l = c * loss[cell % nl];
                    let mut acc = 0.0;
                    for &(q, sigma) in &data {
                        acc += ln_likelihood_single(q, sigma, mu, s, q_l)?;
                        if acc == f64::NEG_INFINITY {
                            break;
                        }
                    }
                    Ok(acc)
                })
                .collect::<Result<Vec<f64>>>()?;
            let axes = vec![
                Axis { name: "xi_um".into(), values: xi.clone() },
                Axis { name: "loss_um".into(), values: loss },
            ];
            (axes, ll)
        }
        ModelKind::Distributed => {
            let mu_l = g.mu_l.values()?;
            let s_l = g.s_l.values()?;
            if s_l[0] <= 0.0 {
                return Err(domain("s_l axis must be positive"));
            }
            let (nm, ns) = (mu_l.len(), s_l.len());
            let rule = GaussLegendre::n64();
            let ll = (0..xi.len() * nm * ns)
                .into_par_iter()
                .map(|cell| {
                    let (mu, s) = params[cell / (nm * ns)];
                    let m_l = mu_l[(cell / ns) % nm] + c.ln();
                    let sl = s_l[cell % ns];
                    let mut acc = 0.0;
                    for &(q, _) in &data {
                        acc += ln_likelihood_distributed(q, mu, s, m_l, sl, rule);
                        if acc == f64::NEG_INFINITY {
                            break;
                        }
                    }
                    acc
                })
                .collect();
            let axes = vec![
                Axis { name: "xi_um".into(), values: xi.clone() },
                Axis { name: "mu_l".into(), values: mu_l },
                Axis { name: "s_l".into(), values: s_l },
            ];
            (axes, ll)
        }
    };

    let norm = log_sum_exp(&ll);
    if !norm.is_finite() {
        let qmax = data.last().map(|d| d.0).unwrap_or(0.0);
        return Err(Error::ModelMismatch(format!(
            "every grid cell has zero likelihood; largest Q = {qmax:.1}, grid xi = [{}, {}] um, Q_l per um = {c:.3}",
            xi[0],
            xi[xi.len() - 1]
        )));
    }
    Ok(PosteriorGrid {
        model: settings.model,
        axes,
        log_posterior: ll.iter().map(|v| v - norm).collect(),
        log_normalization: norm,
        sample_length_um: l,
        wavelength_nm,
        group_index: settings.group_index,
        data_count: data.len(),
    })
}

/// Cells at or above this fraction of the peak posterior form the reported
/// credible region.
pub const CREDIBLE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapLoss {
    Single { length_um: f64 },
    Distributed { mu_l: f64, s_l: f64, mean_length_um: f64 },
}

impl MapLoss {
    /// Loss length for the single model, mean loss length for the
    /// distributed one.
    pub fn length_um(&self) -> f64 {
        match *self {
            MapLoss::Single { length_um } => length_um,
            MapLoss::Distributed { mean_length_um, .. } => mean_length_um,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEstimate {
    pub xi_um: f64,
    pub xi_over_l: f64,
    pub loss: MapLoss,
    pub log_posterior_at_map: f64,
    pub index: Vec<usize>,
    /// The maximum sits on the edge of at least one axis.
    pub on_boundary: bool,
    /// More than one cell attains the maximum.
    pub degenerate: bool,
    pub credible_fraction: f64,
    /// Multi-indices of the cells at or above `credible_fraction` of the peak.
    pub credible_region: Vec<Vec<usize>>,
}

/// Highest-posterior cell. Ties go to the smallest `ξ`, then to the smallest
/// loss coordinates, which is the first maximum in storage order.
pub fn map_estimate(post: &PosteriorGrid) -> MapEstimate {
    let lp = &post.log_posterior;
    let mut best = 0;
    for (i, &v) in lp.iter().enumerate() {
        if v > lp[best] {
            best = i;
        }
    }
    let max = lp[best];
    let degenerate = lp.iter().filter(|&&v| v == max).count() > 1;
    let index = post.unravel(best);
    let shape = post.shape();
    let on_boundary = index.iter().zip(&shape).any(|(&i, &n)| i == 0 || i + 1 == n);
    if on_boundary {
        log::warn!("posterior maximum lies on the grid boundary at {index:?}");
    }
    let cut = max + CREDIBLE_FRACTION.ln();
    let credible_region = lp
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= cut)
        .map(|(i, _)| post.unravel(i))
        .collect();
    let xi_um = post.axes[0].values[index[0]];
    let loss = match post.model {
        ModelKind::Single => MapLoss::Single {
            length_um: post.axes[1].values[index[1]],
        },
        ModelKind::Distributed => {
            let (mu_l, s_l) = (post.axes[1].values[index[1]], post.axes[2].values[index[2]]);
            MapLoss::Distributed {
                mu_l,
                s_l,
                mean_length_um: mean_loss_length(mu_l, s_l).unwrap_or(f64::NAN),
            }
        }
    };
    MapEstimate {
        xi_um,
        xi_over_l: xi_um / post.sample_length_um,
        loss,
        log_posterior_at_map: max,
        index,
        on_boundary,
        degenerate,
        credible_fraction: CREDIBLE_FRACTION,
        credible_region,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTableRow {
    pub length_um: f64,
    pub q_l: f64,
    /// Probability density per µm of loss length.
    pub density_per_um: f64,
}

/// Log-normal loss-length density on `points` geometric steps spanning
/// `exp(µ_l ± 4 s_l)`, with the matching `Q_l`.
pub fn loss_length_table(
    mu_l: f64,
    s_l: f64,
    wavelength_nm: f64,
    group_index: f64,
    points: usize,
) -> Result<Vec<LossTableRow>> {
    if !(s_l > 0.0) || points < 2 {
        return Err(domain("loss table needs s_l > 0 and at least 2 points"));
    }
    let c = loss_q_per_um(wavelength_nm, group_index);
    let axis = AxisSpec::new((mu_l - 4.0 * s_l).exp(), (mu_l + 4.0 * s_l).exp(), points, true);
    Ok(axis
        .values()?
        .into_iter()
        .map(|l| {
            let z = (l.ln() - mu_l) / s_l;
            LossTableRow {
                length_um: l,
                q_l: c * l,
                density_per_um: (-0.5 * z * z - s_l.ln() - LN_SQRT_2PI).exp() / l,
            }
        })
        .collect())
}
