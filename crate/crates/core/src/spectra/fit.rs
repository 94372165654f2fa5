//! Levenberg–Marquardt least squares for sums of Lorentzians on a constant
//! baseline.

use nalgebra::{DMatrix, DVector};

/// `amplitude / (1 + (2 (x - center) / fwhm)²)`.
#[inline]
pub fn lorentzian(x: f64, center: f64, fwhm: f64, amplitude: f64) -> f64 {
    let u = 2.0 * (x - center) / fwhm;
    amplitude / (1.0 + u * u)
}

/// One fitted line with standard errors (NaN when the covariance is
/// degenerate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub center: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    pub center_err: f64,
    pub fwhm_err: f64,
    pub amplitude_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LorentzFit {
    pub lines: Vec<LineFit>,
    pub baseline: f64,
    pub residual_ss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fit `Σ lorentzian + baseline` to `(x, y)` starting from `initial`
/// `(center, fwhm, amplitude)` triples. `baseline` is the starting value of
/// a fitted constant offset; `None` holds the offset at zero.
pub fn fit_lorentzians(
    x: &[f64],
    y: &[f64],
    initial: &[(f64, f64, f64)],
    baseline: Option<f64>,
) -> Option<LorentzFit> {
    let fit_baseline = baseline.is_some();
    let n = x.len();
    let m = initial.len();
    let p = 3 * m + usize::from(fit_baseline);
    if m == 0 || n != y.len() || n <= p {
        return None;
    }
    // work in a centred, scaled frame so the normal equations stay well
    // conditioned for narrow lines at large wavelengths
    let x0 = 0.5 * (x[0] + x[n - 1]);
    let xs = initial
        .iter()
        .map(|l| l.1)
        .fold(f64::INFINITY, f64::min)
        .max(f64::MIN_POSITIVE);
    let ys = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(ys > 0.0) || !ys.is_finite() {
        return None;
    }
    let u: Vec<f64> = x.iter().map(|v| (v - x0) / xs).collect();
    let v: Vec<f64> = y.iter().map(|v| v / ys).collect();

    let mut params = DVector::<f64>::zeros(p);
    for (i, &(c, w, a)) in initial.iter().enumerate() {
        params[3 * i] = (c - x0) / xs;
        params[3 * i + 1] = w / xs;
        params[3 * i + 2] = a / ys;
    }
    if let Some(b) = baseline {
        params[p - 1] = b / ys;
    }

    let model = |pr: &DVector<f64>, t: f64| -> f64 {
        let mut s = if fit_baseline { pr[p - 1] } else { 0.0 };
        for i in 0..m {
            s += lorentzian(t, pr[3 * i], pr[3 * i + 1], pr[3 * i + 2]);
        }
        s
    };
    let ssr = |pr: &DVector<f64>| -> f64 {
        u.iter()
            .zip(&v)
            .map(|(&t, &yv)| {
                let r = yv - model(pr, t);
                r * r
            })
            .sum()
    };
    let jacobian = |pr: &DVector<f64>| -> DMatrix<f64> {
        let mut j = DMatrix::<f64>::zeros(n, p);
        for (row, &t) in u.iter().enumerate() {
            for i in 0..m {
                let (c, w, a) = (pr[3 * i], pr[3 * i + 1], pr[3 * i + 2]);
                let q = 2.0 * (t - c) / w;
                let d = 1.0 / (1.0 + q * q);
                j[(row, 3 * i)] = a * 2.0 * q * d * d * 2.0 / w;
                j[(row, 3 * i + 1)] = a * 2.0 * q * q * d * d / w;
                j[(row, 3 * i + 2)] = d;
            }
            if fit_baseline {
                j[(row, p - 1)] = 1.0;
            }
        }
        j
    };
    let valid = |pr: &DVector<f64>| (0..m).all(|i| pr[3 * i + 1] > 0.0) && pr.iter().all(|v| v.is_finite());

    let mut lambda = 1e-3;
    let mut cost = ssr(&params);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..300 {
        iterations = it + 1;
        let j = jacobian(&params);
        let r = DVector::from_iterator(n, u.iter().zip(&v).map(|(&t, &yv)| yv - model(&params, t)));
        let jtj = j.transpose() * &j;
        let g = j.transpose() * r;
        let mut improved = false;
        for _ in 0..20 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &params + &step;
            if valid(&trial) {
                let c = ssr(&trial);
                if c <= cost {
                    let small = step.norm() <= 1e-12 * (params.norm() + 1e-12);
                    let flat = cost - c <= 1e-15 * cost.max(1e-300);
                    params = trial;
                    cost = c;
                    lambda = (lambda * 0.1).max(1e-12);
                    improved = true;
                    converged = small || flat;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            // no downhill step exists at any damping: a minimum
            converged = true;
        }
        if converged {
            break;
        }
    }

    let dof = (n - p) as f64;
    let s2 = cost / dof;
    let j = jacobian(&params);
    let cov = (j.transpose() * j).try_inverse();
    let err = |k: usize| -> f64 {
        match &cov {
            Some(c) if c[(k, k)] >= 0.0 => (c[(k, k)] * s2).sqrt(),
            _ => f64::NAN,
        }
    };
    let lines = (0..m)
        .map(|i| LineFit {
            center: params[3 * i] * xs + x0,
            fwhm: params[3 * i + 1] * xs,
            amplitude: params[3 * i + 2] * ys,
            center_err: err(3 * i) * xs,
            fwhm_err: err(3 * i + 1) * xs,
            amplitude_err: err(3 * i + 2) * ys,
        })
        .collect();
    Some(LorentzFit {
        lines,
        baseline: if fit_baseline { params[p - 1] * ys } else { 0.0 },
        residual_ss: cost * ys * ys,
        iterations,
        converged,
    })
}
