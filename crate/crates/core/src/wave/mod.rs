//! Scalar 1D Helmholtz solver on a layered medium.
//!
//! Conventions, used throughout the crate:
//!
//! * time dependence `exp(-i ω t)`, so an outgoing wave to the right is
//!   `exp(+i k z)` and a positive `Im(n)` is absorption;
//! * the field obeys `ψ'' + k0² n(z)² ψ = 0`, with `k0 = 2π/λ` and lengths
//!   in µm internally (wavelengths enter in nm);
//! * the Green's function obeys `G'' + k0² n² G = -δ(z - z_src)` with
//!   outgoing boundary conditions, so that in a homogeneous medium
//!   `G(z, z) = i / (2k)` and `Im G(z0, z0) > 0` is the local density of
//!   states of a passive medium.
//!
//! Layer matrices act on the field/derivative pair `(ψ, ψ')`. Products over
//! thousands of layers are never formed explicitly for observables; instead
//! two boundary-value sweeps carry the left- and right-outgoing solutions
//! through the stack with a running log scale, which keeps deep-localization
//! regimes free of overflow.

mod green;
mod matrix;

pub use green::{averaged_green, green_function, GreenField, GreenSample};
pub use matrix::TransferMatrix;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::stack::DisorderedStack;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Vacuum wavenumber in µm⁻¹ for a wavelength in nm.
pub fn wavenumber(wavelength_nm: f64) -> f64 {
    2.0 * PI / (wavelength_nm * 1e-3)
}

/// `cos(k d)` and `sin(k d)`, with a real fast path.
#[inline]
fn cos_sin(k: Complex64, d: f64) -> (Complex64, Complex64) {
    if k.im == 0.0 {
        let (s, c) = (k.re * d).sin_cos();
        (Complex64::new(c, 0.0), Complex64::new(s, 0.0))
    } else {
        let x = k * d;
        (x.cos(), x.sin())
    }
}

/// Field and derivative at a point, stored as `exp(log_scale) * (psi, dpsi)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ScaledState {
    pub psi: Complex64,
    pub dpsi: Complex64,
    pub log_scale: f64,
}

impl ScaledState {
    #[inline]
    fn renormalize(&mut self, k0: f64) {
        let size = self.psi.norm_sqr() + self.dpsi.norm_sqr() / (k0 * k0);
        if !(1e-60..=1e60).contains(&size) {
            let f = size.sqrt();
            self.psi /= f;
            self.dpsi /= f;
            self.log_scale += f.ln();
        }
    }

    /// Advance through a homogeneous slab of wavenumber `k` and thickness
    /// `d` (negative `d` steps backwards).
    #[inline]
    fn step(&mut self, k: Complex64, d: f64) {
        if k.im == 0.0 {
            let (s, c) = (k.re * d).sin_cos();
            let psi = self.psi * c + self.dpsi * (s / k.re);
            self.dpsi = self.dpsi * c - self.psi * (k.re * s);
            self.psi = psi;
            return;
        }
        let (c, s) = cos_sin(k, d);
        let psi = c * self.psi + s / k * self.dpsi;
        let dpsi = -k * s * self.psi + c * self.dpsi;
        self.psi = psi;
        self.dpsi = dpsi;
    }
}

/// Incident-side amplitudes of the right-outgoing solution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Incoming {
    /// Incoming amplitude `A`, as `exp(log_scale) * a`.
    pub a: Complex64,
    /// Reflected amplitude `B`, same scale as `a`.
    pub b: Complex64,
    pub log_scale: f64,
}

/// Complex transmission/reflection data at one wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub wavelength_nm: f64,
    /// Amplitude transmission coefficient (may underflow to zero).
    pub t: Complex64,
    pub r: Complex64,
    /// `ln T`, finite even where `T` underflows.
    pub ln_transmission: f64,
    pub transmission: f64,
    pub reflection: f64,
}

/// Solver bound to one stack and a pair of surrounding half-spaces.
#[derive(Debug, Clone, Copy)]
pub struct WaveSolver<'a> {
    stack: &'a DisorderedStack,
    left_index: f64,
    right_index: f64,
}

impl<'a> WaveSolver<'a> {
    /// Surrounded on both sides by `spec.surround_index`.
    pub fn new(stack: &'a DisorderedStack) -> Self {
        let s = stack.spec.surround_index;
        Self {
            stack,
            left_index: s,
            right_index: s,
        }
    }

    pub fn with_boundaries(mut self, left_index: f64, right_index: f64) -> Self {
        self.left_index = left_index;
        self.right_index = right_index;
        self
    }

    pub fn stack(&self) -> &DisorderedStack {
        self.stack
    }

    pub fn boundaries(&self) -> (f64, f64) {
        (self.left_index, self.right_index)
    }

    fn check_wavelength(&self, wavelength_nm: f64) -> Result<()> {
        if !(wavelength_nm > 0.0) || !wavelength_nm.is_finite() {
            return Err(domain(format!("wavelength {wavelength_nm} nm must be > 0")));
        }
        if !(self.left_index > 0.0 && self.right_index > 0.0) {
            return Err(domain("surrounding indices must be > 0"));
        }
        Ok(())
    }

    /// Complex layer wavenumbers factor: `n_j + i κ`.
    #[inline]
    fn layer_index(&self, j: usize, kappa: f64) -> Complex64 {
        Complex64::new(self.stack.layers[j].index, kappa)
    }

    /// Sweep the right-outgoing solution from `z = L` back to `z = 0` for a
    /// (possibly complex) vacuum wavenumber `k0` in µm⁻¹.
    pub(crate) fn incoming(&self, k0: Complex64, kappa: f64) -> Incoming {
        let k_right = k0 * self.right_index;
        let k_left = k0 * self.left_index;
        let norm_k = k0.norm();
        let mut st = ScaledState {
            psi: Complex64::new(1.0, 0.0),
            dpsi: I * k_right,
            log_scale: 0.0,
        };
        for j in (0..self.stack.layers.len()).rev() {
            let k = k0 * self.layer_index(j, kappa);
            st.step(k, -self.stack.layers[j].thickness_nm * 1e-3);
            st.renormalize(norm_k);
        }
        let d = st.dpsi / (I * k_left);
        Incoming {
            a: 0.5 * (st.psi + d),
            b: 0.5 * (st.psi - d),
            log_scale: st.log_scale,
        }
    }

    /// Full response at a real wavelength.
    pub fn response(&self, wavelength_nm: f64) -> Result<Response> {
        self.check_wavelength(wavelength_nm)?;
        let k0 = wavenumber(wavelength_nm);
        let kappa = self.stack.imag_index(wavelength_nm);
        let inc = self.incoming(Complex64::new(k0, 0.0), kappa);
        let a_abs = inc.a.norm();
        if !(a_abs > 0.0) || !a_abs.is_finite() || !inc.log_scale.is_finite() {
            return Err(Error::Conditioning {
                wavelength_nm,
                seed: self.stack.seed,
                detail: format!("incoming amplitude {} (log scale {})", inc.a, inc.log_scale),
            });
        }
        let ratio = self.right_index / self.left_index;
        let ln_t = ratio.ln() - 2.0 * (inc.log_scale + a_abs.ln());
        let t = (-inc.log_scale).exp() / inc.a;
        let r = inc.b / inc.a;
        Ok(Response {
            wavelength_nm,
            t,
            r,
            ln_transmission: ln_t,
            transmission: ln_t.exp(),
            reflection: r.norm_sqr(),
        })
    }

    /// `|t|²` (flux-normalized) for a unit wave incident from the left.
    pub fn transmission(&self, wavelength_nm: f64) -> Result<f64> {
        Ok(self.response(wavelength_nm)?.transmission)
    }

    pub fn ln_transmission(&self, wavelength_nm: f64) -> Result<f64> {
        Ok(self.response(wavelength_nm)?.ln_transmission)
    }

    /// Transmission on a uniform grid of `points` wavelengths.
    pub fn scan_transmission(
        &self,
        lambda_min_nm: f64,
        lambda_max_nm: f64,
        points: usize,
    ) -> Result<SpectrumScan> {
        let grid = uniform_grid(lambda_min_nm, lambda_max_nm, points)?;
        let values = grid
            .iter()
            .map(|&l| {
                self.transmission(l).map_err(|e| match e {
                    Error::Conditioning { seed, detail, .. } => Error::Conditioning {
                        wavelength_nm: l,
                        seed,
                        detail,
                    },
                    other => domain(format!("at {l} nm: {other}")),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SpectrumScan::new(grid, values, SpectrumKind::Transmission)
    }

    /// Product of all layer matrices in `(ψ, ψ')` form, scaled by
    /// `exp(-log_scale)` to stay representable.
    pub fn stack_matrix(&self, wavelength_nm: f64) -> Result<(TransferMatrix, f64)> {
        self.check_wavelength(wavelength_nm)?;
        let k0 = wavenumber(wavelength_nm);
        let kappa = self.stack.imag_index(wavelength_nm);
        let mut m = TransferMatrix::identity();
        let mut log_scale = 0.0;
        for (j, layer) in self.stack.layers.iter().enumerate() {
            let k = self.layer_index(j, kappa) * k0;
            m = m.then(&TransferMatrix::layer(k, layer.thickness_nm * 1e-3));
            let size = m.max_abs();
            if size > 1e30 {
                m = m.scale(1.0 / size);
                log_scale += size.ln();
            }
        }
        Ok((m, log_scale))
    }

    /// Right-outgoing pole of the response near `guess_nm`, found by secant
    /// iteration on the incoming amplitude in the complex wavenumber plane.
    ///
    /// `width_guess_nm` seeds the imaginary part. Returns `None` if the
    /// iteration does not converge to a decaying resonance.
    pub fn find_pole(&self, guess_nm: f64, width_guess_nm: f64) -> Result<Option<Pole>> {
        self.check_wavelength(guess_nm)?;
        let kappa = self.stack.imag_index(guess_nm);
        let k_guess = wavenumber(guess_nm);
        let gamma0 = 0.5 * k_guess * (width_guess_nm / guess_nm).max(1e-9);
        // the running scale differs between iterates, so undo it
        let g = |k: Complex64| {
            let inc = self.incoming(k, kappa);
            inc.a * inc.log_scale.exp()
        };
        let mut x0 = Complex64::new(k_guess, 0.0);
        let mut x1 = Complex64::new(k_guess, -gamma0);
        let mut f0 = g(x0);
        let mut f1 = g(x1);
        for _ in 0..60 {
            let denom = f1 - f0;
            if denom.norm() == 0.0 || !denom.is_finite() {
                break;
            }
            let mut x2 = x1 - f1 * (x1 - x0) / denom;
            // keep the iterate near the real axis window it started from
            let max_step = 0.02 * k_guess;
            let step = x2 - x1;
            if step.norm() > max_step {
                x2 = x1 + step * (max_step / step.norm());
            }
            let converged = (x2 - x1).norm() <= 1e-14 * x2.norm();
            x0 = x1;
            f0 = f1;
            x1 = x2;
            if converged {
                break;
            }
            f1 = g(x1);
            if !f1.is_finite() {
                return Ok(None);
            }
            if f1.norm() == 0.0 {
                break;
            }
        }
        let k = x1;
        let resid = g(k).norm();
        let scale = g(Complex64::new(k.re, 0.0)).norm();
        let settled = (x1 - x0).norm() <= 1e-9 * k.norm();
        if !(k.im < 0.0) || !settled || !(resid <= 1e-6 * scale.max(f64::MIN_POSITIVE)) {
            return Ok(None);
        }
        let wavelength_nm = 2.0 * PI / k.re * 1e3;
        Ok(Some(Pole {
            wavelength_nm,
            q: k.re / (-2.0 * k.im),
            k0: k,
        }))
    }
}

/// Complex-wavenumber resonance of the open stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pole {
    pub wavelength_nm: f64,
    /// `Re k0 / (2 |Im k0|)`.
    pub q: f64,
    pub k0: Complex64,
}

impl Pole {
    pub fn fwhm_nm(&self) -> f64 {
        self.wavelength_nm / self.q
    }
}

/// `|t|²` for a stack surrounded by `spec.surround_index`.
pub fn transmission(stack: &DisorderedStack, wavelength_nm: f64) -> Result<f64> {
    WaveSolver::new(stack).transmission(wavelength_nm)
}

pub fn scan_transmission(
    stack: &DisorderedStack,
    lambda_min_nm: f64,
    lambda_max_nm: f64,
    points: usize,
) -> Result<SpectrumScan> {
    WaveSolver::new(stack).scan_transmission(lambda_min_nm, lambda_max_nm, points)
}

pub fn uniform_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min < max) || !(min > 0.0) || !max.is_finite() {
        return Err(domain(format!("need 0 < lambda_min < lambda_max, got [{min}, {max}]")));
    }
    if points < 2 {
        return Err(domain(format!("need at least 2 grid points, got {points}")));
    }
    let step = (max - min) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i + 1 == points { max } else { min + step * i as f64 })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectrumKind {
    Transmission,
    Intensity,
    Ldos,
}

/// Real-valued spectrum on a strictly increasing wavelength grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumScan {
    pub wavelengths_nm: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: SpectrumKind,
    /// Mean grid spacing.
    pub step_nm: f64,
}

impl SpectrumScan {
    pub fn new(wavelengths_nm: Vec<f64>, values: Vec<f64>, kind: SpectrumKind) -> Result<Self> {
        if wavelengths_nm.len() != values.len() {
            return Err(domain("wavelength and value columns differ in length"));
        }
        if wavelengths_nm.len() < 2 {
            return Err(domain("a scan needs at least two points"));
        }
        if wavelengths_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(domain("wavelengths must be strictly increasing"));
        }
        let n = wavelengths_nm.len();
        let step_nm = (wavelengths_nm[n - 1] - wavelengths_nm[0]) / (n - 1) as f64;
        Ok(Self {
            wavelengths_nm,
            values,
            kind,
            step_nm,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with header `wavelength_nm,value`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 48 + 20);
        out.push_str("wavelength_nm,value\n");
        for (l, v) in self.wavelengths_nm.iter().zip(&self.values) {
            out.push_str(&crate::io::fmt_f64(*l));
            out.push(',');
            out.push_str(&crate::io::fmt_f64(*v));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, kind: SpectrumKind, file: &str) -> Result<Self> {
        let rows = crate::io::parse_csv(text, file, &["wavelength_nm", "value"])?;
        let (l, v): (Vec<f64>, Vec<f64>) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
        Self::new(l, v, kind)
    }
}
