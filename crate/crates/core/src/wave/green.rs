use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{wavenumber, ScaledState, WaveSolver, I};
use crate::error::{domain, Error, Result};
use crate::stack::DisorderedStack;

/// Outgoing solutions of one stack at one wavelength, stored at every layer
/// interface so that `G(z, z')` can be evaluated anywhere in `O(log N)`.
#[derive(Debug, Clone)]
pub struct GreenField {
    wavelength_nm: f64,
    /// Interface positions in µm, `z[0] = 0`, `z[N] = L`.
    z: Vec<f64>,
    /// Complex layer wavenumbers, µm⁻¹.
    k: Vec<Complex64>,
    /// Largest real index, used for the averaging step.
    n_re: Vec<f64>,
    left: Vec<ScaledState>,
    right: Vec<ScaledState>,
}

impl GreenField {
    pub fn new(solver: &WaveSolver<'_>, wavelength_nm: f64) -> Result<Self> {
        solver.check_wavelength(wavelength_nm)?;
        let stack = solver.stack();
        let (n_left, n_right) = solver.boundaries();
        let k0 = wavenumber(wavelength_nm);
        let kappa = stack.imag_index(wavelength_nm);
        let n = stack.layers.len();

        let mut z = Vec::with_capacity(n + 1);
        z.push(0.0);
        let mut acc = 0.0;
        for l in &stack.layers {
            acc += l.thickness_nm * 1e-3;
            z.push(acc);
        }
        let k: Vec<Complex64> = stack
            .layers
            .iter()
            .map(|l| Complex64::new(l.index, kappa) * k0)
            .collect();

        let mut left = Vec::with_capacity(n + 1);
        let mut st = ScaledState {
            psi: Complex64::new(1.0, 0.0),
            dpsi: -I * k0 * n_left,
            log_scale: 0.0,
        };
        left.push(st);
        for j in 0..n {
            st.step(k[j], z[j + 1] - z[j]);
            st.renormalize(k0);
            left.push(st);
        }

        let mut right = vec![st; n + 1];
        let mut st = ScaledState {
            psi: Complex64::new(1.0, 0.0),
            dpsi: I * k0 * n_right,
            log_scale: 0.0,
        };
        right[n] = st;
        for j in (0..n).rev() {
            st.step(k[j], -(z[j + 1] - z[j]));
            st.renormalize(k0);
            right[j] = st;
        }

        Ok(Self {
            wavelength_nm,
            z,
            k,
            n_re: stack.layers.iter().map(|l| l.index).collect(),
            left,
            right,
        })
    }

    pub fn wavelength_nm(&self) -> f64 {
        self.wavelength_nm
    }

    pub fn length_um(&self) -> f64 {
        *self.z.last().expect("non-empty")
    }

    fn layer_of(&self, z: f64) -> usize {
        let n = self.k.len();
        match self.z.partition_point(|&x| x <= z) {
            0 => 0,
            p => (p - 1).min(n - 1),
        }
    }

    fn check_position(&self, z: f64) -> Result<()> {
        if !(0.0..=self.length_um()).contains(&z) {
            return Err(domain(format!(
                "position {z} µm outside the stack [0, {}]",
                self.length_um()
            )));
        }
        Ok(())
    }

    /// Left-outgoing solution at `z`, with its log scale.
    fn psi_left(&self, z: f64, j: usize) -> ScaledState {
        let mut st = self.left[j];
        st.step(self.k[j], z - self.z[j]);
        st
    }

    fn psi_right(&self, z: f64, j: usize) -> ScaledState {
        let mut st = self.right[j + 1];
        st.step(self.k[j], z - self.z[j + 1]);
        st
    }

    fn wronskian(&self, l: &ScaledState, r: &ScaledState) -> Result<Complex64> {
        let w = l.psi * r.dpsi - l.dpsi * r.psi;
        let size = (l.psi * r.dpsi).norm() + (l.dpsi * r.psi).norm();
        if !(w.norm() > 1e-14 * size) {
            return Err(Error::DegenerateSolution {
                wavelength_nm: self.wavelength_nm,
                wronskian: w.norm(),
            });
        }
        Ok(w)
    }

    /// `G(z, z)`.
    pub fn diagonal(&self, z: f64) -> Result<Complex64> {
        self.check_position(z)?;
        let j = self.layer_of(z);
        let l = self.psi_left(z, j);
        let r = self.psi_right(z, j);
        let w = self.wronskian(&l, &r)?;
        Ok(-l.psi * r.psi / w)
    }

    /// `G(z, z_src)`, field at `z` of a unit point source at `z_src`.
    pub fn green(&self, z: f64, z_src: f64) -> Result<Complex64> {
        self.check_position(z)?;
        self.check_position(z_src)?;
        let (lo, hi) = if z <= z_src { (z, z_src) } else { (z_src, z) };
        let jl = self.layer_of(lo);
        let jh = self.layer_of(hi);
        let l_lo = self.psi_left(lo, jl);
        let l_hi = self.psi_left(hi, jh);
        let r_hi = self.psi_right(hi, jh);
        let w = self.wronskian(&l_hi, &r_hi)?;
        let rel = (l_lo.log_scale - l_hi.log_scale).exp();
        Ok(-l_lo.psi * rel * r_hi.psi / w)
    }

    /// Window mean of `G(z, z)` over one vacuum wavelength centred on
    /// `z_src`, clipped to the stack. Panels are at most `λ / (per_wl n_max)`
    /// wide and each is integrated with Simpson's rule.
    pub fn averaged(&self, z_src: f64, samples_per_wavelength: f64) -> Result<GreenSample> {
        self.averaged_impl(z_src, samples_per_wavelength, false)
    }

    /// As [`GreenField::averaged`], also returning the sampled diagonal.
    pub fn averaged_with_samples(
        &self,
        z_src: f64,
        samples_per_wavelength: f64,
    ) -> Result<GreenSample> {
        self.averaged_impl(z_src, samples_per_wavelength, true)
    }

    fn averaged_impl(&self, z_src: f64, per_wl: f64, keep: bool) -> Result<GreenSample> {
        if !(per_wl >= 1.0) {
            return Err(domain("samples per wavelength must be >= 1"));
        }
        let lambda_um = self.wavelength_nm * 1e-3;
        let half = 0.5 * lambda_um;
        let lo = (z_src - half).max(0.0);
        let hi = (z_src + half).min(self.length_um());
        if !(hi > lo) {
            return Err(domain(format!(
                "averaging window around {z_src} µm lies outside the stack [0, {}]",
                self.length_um()
            )));
        }
        let clipped = lo > z_src - half || hi < z_src + half;
        let (ja, jb) = (self.layer_of(lo), self.layer_of(hi));
        let n_max = self.n_re[ja..=jb].iter().copied().fold(1.0, f64::max);
        let h_max = lambda_um / (per_wl * n_max);
        // G(z, z) only has a kink in its second derivative at interfaces, so
        // Simpson panels that never straddle one converge at fourth order.
        let mut breaks = vec![lo];
        breaks.extend(self.z[ja + 1..=jb].iter().copied().filter(|&x| x > lo && x < hi));
        breaks.push(hi);
        let mut sum = Complex64::new(0.0, 0.0);
        let mut steps = 0;
        let mut raw = keep.then(Vec::new);
        for seg in breaks.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let m = ((b - a) / h_max).ceil().max(1.0) as usize;
            let h = (b - a) / m as f64;
            let mut left = self.diagonal(a)?;
            if let Some(r) = raw.as_mut() {
                if r.is_empty() {
                    r.push((a, left));
                }
            }
            for i in 0..m {
                let x0 = a + h * i as f64;
                let x1 = if i + 1 == m { b } else { x0 + h };
                let xm = 0.5 * (x0 + x1);
                let gm = self.diagonal(xm)?;
                let right = self.diagonal(x1)?;
                sum += (left + gm * 4.0 + right) * ((x1 - x0) / 6.0);
                if let Some(r) = raw.as_mut() {
                    r.push((xm, gm));
                    r.push((x1, right));
                }
                left = right;
            }
            steps += m;
        }
        Ok(GreenSample {
            source_position_um: z_src,
            wavelength_nm: self.wavelength_nm,
            averaged_value: sum / (hi - lo),
            window_um: (lo, hi),
            clipped,
            steps,
            raw_diagonal: raw,
        })
    }
}

/// Spatially averaged local Green's function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenSample {
    pub source_position_um: f64,
    pub wavelength_nm: f64,
    /// Window mean of `G(z, z)`, in µm.
    pub averaged_value: Complex64,
    pub window_um: (f64, f64),
    /// Whether the window was cut by a stack boundary.
    pub clipped: bool,
    /// Number of Simpson panels.
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_diagonal: Option<Vec<(f64, Complex64)>>,
}

/// `G(z, z_src)` for a stack in its own surrounding medium.
pub fn green_function(
    stack: &DisorderedStack,
    z_um: f64,
    z_src_um: f64,
    wavelength_nm: f64,
) -> Result<Complex64> {
    GreenField::new(&WaveSolver::new(stack), wavelength_nm)?.green(z_um, z_src_um)
}

/// One-wavelength window mean of `G(z, z)` with 20 samples per `λ/n`.
pub fn averaged_green(
    stack: &DisorderedStack,
    z_src_um: f64,
    wavelength_nm: f64,
) -> Result<GreenSample> {
    GreenField::new(&WaveSolver::new(stack), wavelength_nm)?.averaged(z_src_um, 20.0)
}
