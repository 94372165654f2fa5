use num_complex::Complex64;
use serde::{Deserialize, Serialize};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// 2×2 complex transfer matrix.
///
/// Layer matrices map `(ψ, ψ')` across a slab and are unimodular, so any
/// product has determinant 1 (magnitude 1 also for lossy layers). Converting
/// to forward/backward amplitudes with [`TransferMatrix::to_amplitudes`]
/// gives determinant `k_left / k_right`, i.e. 1 for identical surroundings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub m11: Complex64,
    pub m12: Complex64,
    pub m21: Complex64,
    pub m22: Complex64,
}

impl TransferMatrix {
    pub fn identity() -> Self {
        Self {
            m11: ONE,
            m12: ZERO,
            m21: ZERO,
            m22: ONE,
        }
    }

    /// Homogeneous slab of wavenumber `k` (µm⁻¹) and thickness `d` (µm).
    pub fn layer(k: Complex64, d: f64) -> Self {
        let (c, s) = if k.im == 0.0 {
            let (s, c) = (k.re * d).sin_cos();
            (Complex64::new(c, 0.0), Complex64::new(s, 0.0))
        } else {
            ((k * d).cos(), (k * d).sin())
        };
        Self {
            m11: c,
            m12: s / k,
            m21: -k * s,
            m22: c,
        }
    }

    /// Matrix product `self · rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        Self {
            m11: self.m11 * rhs.m11 + self.m12 * rhs.m21,
            m12: self.m11 * rhs.m12 + self.m12 * rhs.m22,
            m21: self.m21 * rhs.m11 + self.m22 * rhs.m21,
            m22: self.m21 * rhs.m12 + self.m22 * rhs.m22,
        }
    }

    /// Apply `self` first, then `next` (layer order).
    pub fn then(&self, next: &Self) -> Self {
        next.mul(self)
    }

    pub fn det(&self) -> Complex64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn scale(&self, f: f64) -> Self {
        Self {
            m11: self.m11 * f,
            m12: self.m12 * f,
            m21: self.m21 * f,
            m22: self.m22 * f,
        }
    }

    pub fn max_abs(&self) -> f64 {
        [self.m11, self.m12, self.m21, self.m22]
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, v: (Complex64, Complex64)) -> (Complex64, Complex64) {
        (
            self.m11 * v.0 + self.m12 * v.1,
            self.m21 * v.0 + self.m22 * v.1,
        )
    }

    /// Re-express a `(ψ, ψ')` matrix in forward/backward amplitudes
    /// `a e^{ikz} + b e^{-ikz}` of the left and right half-spaces.
    pub fn to_amplitudes(&self, k_left: Complex64, k_right: Complex64) -> Self {
        let w_left = Self {
            m11: ONE,
            m12: ONE,
            m21: I * k_left,
            m22: -I * k_left,
        };
        let inv_right = Self {
            m11: 0.5 * ONE,
            m12: 0.5 / (I * k_right),
            m21: 0.5 * ONE,
            m22: -0.5 / (I * k_right),
        };
        inv_right.mul(&self.mul(&w_left))
    }

    /// Amplitude transmission and reflection `(t, r)` of an amplitude-basis
    /// matrix for incidence from the left.
    pub fn amplitude_coefficients(&self) -> (Complex64, Complex64) {
        let r = -self.m21 / self.m22;
        (self.det() / self.m22, r)
    }
}
