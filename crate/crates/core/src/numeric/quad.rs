//! Quadrature rules: globally adaptive Gauss–Kronrod (7/15) and
//! Gauss–Legendre node tables.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the 7-point rule living on XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        kronrod += w * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Segment {
        a,
        b,
        value: kronrod * h,
        error: ((kronrod - gauss) * h).abs(),
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// Globally adaptive Gauss–Kronrod on `[a, b]`: the segment with the
/// largest error estimate is bisected until the total estimate falls below
/// `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Integral> {
    integrate_segments(&mut f, &[a, b], abs_tol, rel_tol, 500)
}

/// Like [`integrate`] but starting from the given break points, which should
/// contain any location where the integrand has a kink or a sharp feature.
pub fn integrate_segments<F: FnMut(f64) -> f64>(
    f: &mut F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_segments: usize,
) -> Result<Integral> {
    if breaks.len() < 2 {
        return Err(Error::Integration("need at least two break points".into()));
    }
    if breaks.iter().any(|x| !x.is_finite()) {
        return Err(Error::Integration(format!("non-finite bounds {breaks:?}")));
    }
    let mut segs: Vec<Segment> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk15(f, w[0], w[1]))
        .collect();
    let mut evaluations = 15 * segs.len();
    if segs.is_empty() {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
            evaluations,
        });
    }
    loop {
        let value: f64 = segs.iter().map(|s| s.value).sum();
        let error: f64 = segs.iter().map(|s| s.error).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::Integration(format!(
                "non-finite integrand on [{}, {}]",
                breaks[0],
                breaks[breaks.len() - 1]
            )));
        }
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Integral {
                value,
                error,
                evaluations,
            });
        }
        if segs.len() >= max_segments {
            return Err(Error::Integration(format!(
                "no convergence on [{}, {}] after {} segments: value {value:e}, error {error:e}",
                breaks[0],
                breaks[breaks.len() - 1],
                segs.len()
            )));
        }
        let (worst, _) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("non-empty");
        let s = segs.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            return Err(Error::Integration(format!(
                "segment [{}, {}] cannot be subdivided further",
                s.a, s.b
            )));
        }
        segs.push(gk15(f, s.a, mid));
        segs.push(gk15(f, mid, s.b));
        evaluations += 30;
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss–Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Shared 64-node table.
    pub fn n64() -> &'static GaussLegendre {
        static TABLE: OnceLock<GaussLegendre> = OnceLock::new();
        TABLE.get_or_init(|| GaussLegendre::new(64))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫_a^b f` with this rule.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(c + h * x))
            .sum::<f64>()
            * h
    }
}

/// `(P_n(x), P_n'(x))` via the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_polynomials_exact() {
        let r = integrate(|x| x.powi(5) - 2.0 * x * x + 1.0, -1.0, 2.0, 1e-14, 1e-14).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - 2.0 * (8.0 + 1.0) / 3.0 + 3.0;
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_peaks() {
        // narrow Lorentzian, integral = atan(1/eps)*2 ≈ pi
        let eps = 1e-4;
        let r = integrate(|x| eps / (x * x + eps * eps), -1.0, 1.0, 1e-12, 1e-10).unwrap();
        let exact = 2.0 * (1.0 / eps).atan();
        assert!((r.value - exact).abs() < 1e-8, "{} vs {}", r.value, exact);
    }

    #[test]
    fn non_finite_integrand_is_an_error() {
        assert!(integrate(|x| 1.0 / x, 0.0, 1.0, 1e-10, 1e-10).is_err());
    }

    #[test]
    fn legendre_rule_matches_known_weights() {
        let g = GaussLegendre::new(3);
        assert!((g.nodes[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!((g.weights[1] - 8.0 / 9.0).abs() < 1e-15);
        let g = GaussLegendre::n64();
        assert!((g.weights.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        let v = g.integrate(0.0, std::f64::consts::PI, f64::sin);
        assert!((v - 2.0).abs() < 1e-14);
        // odd rule has a node at zero
        let g = GaussLegendre::new(5);
        assert!(g.nodes[2].abs() < 1e-16);
    }
}
