//! Disorder realizations of the layered 1D medium.
//!
//! A [`StackSpec`] fixes the macroscopic parameters; a seed fixes one
//! realization. Layer indices are i.i.d. uniform on `[n - dn, n + dn]` and are
//! drawn as `n + dn * (2u - 1)` from a single uniform stream, so two stacks
//! built from the same seed with different `delta_n` share their random
//! numbers (common random numbers across a disorder sweep).

use std::f64::consts::PI;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

fn default_mean_index() -> f64 {
    3.44
}
fn default_layer_thickness() -> f64 {
    10.0
}
fn default_sample_length() -> f64 {
    100.0
}
fn default_surround() -> f64 {
    1.0
}

/// Macroscopic parameters of the layered medium.
///
/// Lengths carry their unit in the field name. `loss_length_um = None` (or an
/// infinite value in a config file) means a lossless medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    #[serde(default = "default_mean_index")]
    pub mean_index: f64,
    #[serde(default)]
    pub delta_n: f64,
    #[serde(default = "default_layer_thickness")]
    pub layer_thickness_nm: f64,
    #[serde(default = "default_sample_length")]
    pub sample_length_um: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_length_um: Option<f64>,
    #[serde(default = "default_surround")]
    pub surround_index: f64,
}

impl Default for StackSpec {
    fn default() -> Self {
        Self {
            mean_index: default_mean_index(),
            delta_n: 0.0,
            layer_thickness_nm: default_layer_thickness(),
            sample_length_um: default_sample_length(),
            loss_length_um: None,
            surround_index: default_surround(),
        }
    }
}

impl StackSpec {
    pub fn with_delta_n(mut self, delta_n: f64) -> Self {
        self.delta_n = delta_n;
        self
    }

    pub fn with_sample_length(mut self, sample_length_um: f64) -> Self {
        self.sample_length_um = sample_length_um;
        self
    }

    pub fn with_loss_length(mut self, loss_length_um: Option<f64>) -> Self {
        self.loss_length_um = loss_length_um.filter(|l| l.is_finite());
        self
    }

    pub fn with_surround(mut self, surround_index: f64) -> Self {
        self.surround_index = surround_index;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.mean_index,
            self.delta_n,
            self.layer_thickness_nm,
            self.sample_length_um,
            self.surround_index,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(domain("stack parameters must be finite"));
        }
        if self.delta_n < 0.0 {
            return Err(domain(format!("delta_n = {} must be >= 0", self.delta_n)));
        }
        if self.delta_n >= self.mean_index {
            return Err(domain(format!(
                "delta_n = {} must be < mean_index = {} (index must stay positive)",
                self.delta_n, self.mean_index
            )));
        }
        if self.layer_thickness_nm <= 0.0 {
            return Err(domain(format!(
                "layer_thickness_nm = {} must be > 0",
                self.layer_thickness_nm
            )));
        }
        if self.sample_length_um * 1e3 < self.layer_thickness_nm {
            return Err(domain(format!(
                "sample_length_um = {} must be >= layer thickness ({} nm)",
                self.sample_length_um, self.layer_thickness_nm
            )));
        }
        if let Some(l) = self.loss_length_um {
            if l.is_nan() || l <= 0.0 {
                return Err(domain(format!("loss_length_um = {l} must be > 0")));
            }
        }
        if self.surround_index <= 0.0 {
            return Err(domain(format!(
                "surround_index = {} must be > 0",
                self.surround_index
            )));
        }
        Ok(())
    }

    /// `round(L / Lp)`.
    pub fn layer_count(&self) -> usize {
        (self.sample_length_um * 1e3 / self.layer_thickness_nm).round() as usize
    }

    /// Finite loss length, `None` when lossless.
    pub fn loss_length(&self) -> Option<f64> {
        self.loss_length_um.filter(|l| l.is_finite())
    }
}

/// `Im(n) = lambda / (2 pi l)`; zero for an infinite loss length.
///
/// Both lengths may be given in any common unit; here µm for the loss length
/// and nm for the wavelength.
pub fn imag_index_for(loss_length_um: f64, wavelength_nm: f64) -> Result<f64> {
    if loss_length_um.is_nan() || loss_length_um <= 0.0 {
        return Err(domain(format!("loss length {loss_length_um} µm must be > 0")));
    }
    if wavelength_nm.is_nan() || wavelength_nm <= 0.0 {
        return Err(domain(format!("wavelength {wavelength_nm} nm must be > 0")));
    }
    if loss_length_um.is_infinite() {
        return Ok(0.0);
    }
    Ok(wavelength_nm * 1e-3 / (2.0 * PI * loss_length_um))
}

/// One layer: thickness and the real part of its refractive index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub thickness_nm: f64,
    pub index: f64,
}

/// One disorder realization.
///
/// The imaginary part of the index is not stored: it is uniform over the
/// stack and is derived from `spec.loss_length_um` at the wavelength of each
/// computation (see [`DisorderedStack::imag_index`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderedStack {
    pub layers: Vec<Layer>,
    pub spec: StackSpec,
    pub seed: u64,
}

impl DisorderedStack {
    /// Homogeneous stack where every layer has index `index`.
    pub fn homogeneous(spec: StackSpec, index: f64) -> Result<Self> {
        spec.validate()?;
        let layers = vec![
            Layer {
                thickness_nm: spec.layer_thickness_nm,
                index
            };
            spec.layer_count()
        ];
        Ok(Self {
            layers,
            spec,
            seed: 0,
        })
    }

    /// Stack from explicit layers (thicknesses may differ).
    pub fn from_layers(spec: StackSpec, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(domain("stack needs at least one layer"));
        }
        if layers
            .iter()
            .any(|l| !(l.thickness_nm > 0.0) || !(l.index > 0.0))
        {
            return Err(domain("layers need positive thickness and index"));
        }
        Ok(Self {
            layers,
            spec,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Physical length in µm (sum of layer thicknesses).
    pub fn length_um(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness_nm).sum::<f64>() * 1e-3
    }

    pub fn imag_index(&self, wavelength_nm: f64) -> f64 {
        match self.spec.loss_length() {
            Some(l) => imag_index_for(l, wavelength_nm).unwrap_or(0.0),
            None => 0.0,
        }
    }

    pub fn uniform_thickness(&self) -> Option<f64> {
        let d = self.layers.first()?.thickness_nm;
        self.layers
            .iter()
            .all(|l| l.thickness_nm == d)
            .then_some(d)
    }
}

/// Draw one realization. Identical `(spec, seed)` pairs give bit-identical
/// stacks.
pub fn generate_stack(spec: &StackSpec, seed: u64) -> Result<DisorderedStack> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.mean_index;
    let dn = spec.delta_n;
    let layers = (0..spec.layer_count())
        .map(|_| {
            let u: f64 = rng.random();
            Layer {
                thickness_nm: spec.layer_thickness_nm,
                index: n + dn * (2.0 * u - 1.0),
            }
        })
        .collect();
    Ok(DisorderedStack {
        layers,
        spec: spec.clone(),
        seed,
    })
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of realization `index` under `master_seed`. Counter-based, so any
/// realization can be regenerated without touching the others.
pub fn realization_seed(master_seed: u64, index: u64) -> u64 {
    mix64(master_seed ^ mix64(index ^ 0xa076_1d64_78bd_642f))
}

/// A set of realizations sharing macroscopic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    #[serde(flatten)]
    pub base: StackSpec,
    #[serde(rename = "realizations")]
    pub realization_count: usize,
    pub master_seed: u64,
}

impl EnsembleSpec {
    pub fn new(base: StackSpec, realization_count: usize, master_seed: u64) -> Self {
        Self {
            base,
            realization_count,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.realization_count == 0 {
            return Err(domain("realization count must be >= 1"));
        }
        Ok(())
    }

    pub fn seed(&self, index: usize) -> u64 {
        realization_seed(self.master_seed, index as u64)
    }

    pub fn realization(&self, index: usize) -> Result<DisorderedStack> {
        generate_stack(&self.base, self.seed(index))
    }

    /// Realizations in `range`, in order. Splitting `0..count` into any set
    /// of sub-ranges yields the same stacks as iterating the whole range.
    pub fn iter_range(
        &self,
        range: Range<usize>,
    ) -> impl Iterator<Item = Result<DisorderedStack>> + '_ {
        range.map(move |i| self.realization(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<DisorderedStack>> + '_ {
        self.iter_range(0..self.realization_count)
    }

    /// Split `0..realization_count` into `parts` contiguous ranges.
    pub fn partitions(&self, parts: usize) -> Vec<Range<usize>> {
        let parts = parts.max(1);
        let n = self.realization_count;
        (0..parts)
            .map(|p| (p * n / parts)..((p + 1) * n / parts))
            .filter(|r| !r.is_empty())
            .collect()
    }
}

/// Stream of realizations for an ensemble, validated up front.
pub fn ensemble_iter(
    ens: &EnsembleSpec,
) -> Result<impl Iterator<Item = DisorderedStack> + '_> {
    ens.validate()?;
    // spec already validated: generate_stack cannot fail below
    Ok(ens.iter().map(|s| s.expect("validated spec")))
}
