use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use super::*;
use crate::numeric::quad::integrate_segments;
use crate::numeric::stats::{self, ks_test, mean, normal_cdf, normal_pdf};
use crate::spectra::{DatasetMeta, QDataset};

fn cal() -> Calibration {
    Calibration::reference()
}

/// ∫₀^{Q_l} p1 dq directly in q, with break points where Q0 crosses
/// `exp(µ + k s)` so the quadrature sees every feature of the density.
fn p1_mass(mu: f64, s: f64, q_l: f64) -> f64 {
    let mut breaks = vec![0.0];
    for k in -12..=12 {
        let q = compose_q((mu + s * k as f64).exp(), q_l);
        if q > 0.0 && q < q_l {
            breaks.push(q);
        }
    }
    breaks.push(q_l);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut f = |q: f64| ln_p1(q, mu, s, q_l).exp();
    integrate_segments(&mut f, &breaks, 0.0, 1e-11, 2000).unwrap().value
}

#[test]
fn loss_q_value() {
    // 3.44 π · 700 µm / 950 nm
    assert!((loss_q(700.0, 950.0, 3.44) - 7963.11).abs() < 0.01);
    let m = LossModel::single(700.0, 950.0).unwrap();
    assert_eq!(m.q_l().unwrap(), loss_q(700.0, 950.0, 3.44));
}

#[test]
fn compose_and_invert() {
    let q = compose_q(20_000.0, 8_000.0);
    assert!((1.0 / q - 1.0 / 20_000.0 - 1.0 / 8_000.0).abs() < 1e-18);
    assert!((inplane_q(q, 8_000.0).unwrap() - 20_000.0).abs() < 1e-8);
    assert_eq!(inplane_q(8_000.0, 8_000.0), None);
    assert_eq!(compose_q(5.0, f64::INFINITY), 5.0);
}

#[test]
fn truncation_is_exact() {
    let loss = LossModel::single(700.0, 950.0).unwrap();
    let q_l = loss.q_l().unwrap();
    for q in [q_l, q_l * (1.0 + 1e-15), 2.0 * q_l] {
        assert_eq!(p1_density(q, 0.1, &loss, &cal()).unwrap(), 0.0);
    }
    assert!(p1_density(q_l * 0.99, 0.1, &loss, &cal()).unwrap() > 0.0);
    assert!(p1_density(0.0, 0.1, &loss, &cal()).is_err());
    assert!(p1_density(-1.0, 0.1, &loss, &cal()).is_err());
}

#[test]
fn lossless_limit_is_log_normal() {
    let (mu, s) = q0_params(&cal(), 0.1).unwrap();
    for q in [2_000.0, 10_000.0, 40_000.0] {
        let ln = normal_pdf(f64::ln(q), mu, s) / q;
        let far = LossModel::single(1e12, 950.0).unwrap();
        let p = p1_density(q, 0.1, &far, &cal()).unwrap();
        assert!((p / ln - 1.0).abs() < 1e-6, "{q}: {p} vs {ln}");
        assert!((ln_p1(q, mu, s, f64::INFINITY).exp() / ln - 1.0).abs() < 1e-12);
    }
}

#[test]
fn p1_normalized_on_grid() {
    let c = cal();
    for x in [0.03, 0.06, 0.1, 0.2, 0.4] {
        for l in [100.0, 300.0, 500.0, 700.0, 3000.0] {
            let (mu, s) = q0_params(&c, x).unwrap();
            let q_l = loss_q(l, 950.0, 3.44);
            let m = p1_mass(mu, s, q_l);
            assert!((m - 1.0).abs() < 1e-6, "xi/L {x}, l {l}: {m}");
        }
    }
}

#[test]
fn p1_samples_follow_analytic_cdf() {
    let (mu, s) = q0_params(&cal(), 0.1).unwrap();
    let q_l = loss_q(500.0, 950.0, 3.44);
    let xs = sample_p1_seeded(100_000, mu, s, q_l, 17);
    assert!(xs.iter().all(|&q| q < q_l && q > 0.0));
    let ks = ks_test(&xs, |q| match inplane_q(q, q_l) {
        Some(q0) => normal_cdf(q0.ln(), mu, s),
        None => 1.0,
    });
    assert!(ks.passes(0.01), "{ks:?}");
}

#[test]
fn narrow_kernel_recovers_p1() {
    let (mu, s) = q0_params(&cal(), 0.1).unwrap();
    let q_l = loss_q(700.0, 950.0, 3.44);
    for q in [3000.0, 6000.0, 7500.0] {
        let p = ln_p1(q, mu, s, q_l).exp();
        let l = ln_likelihood_single(q, 1e-4, mu, s, q_l).unwrap().exp();
        assert!((l / p - 1.0).abs() < 1e-6, "{q}: {l} vs {p}");
    }
}

#[test]
fn kernel_smooths_truncation() {
    let loss = LossModel::single(700.0, 950.0).unwrap();
    let q_l = loss.q_l().unwrap();
    let sigma = 0.05 * q_l;
    let l = likelihood_single_loss(q_l + sigma, sigma, 0.1, &loss, &cal()).unwrap();
    let (mu, s) = q0_params(&cal(), 0.1).unwrap();
    let peak = (1..4000)
        .map(|i| ln_p1(q_l * i as f64 / 4000.0, mu, s, q_l).exp())
        .fold(0.0, f64::max);
    assert!(l > 0.0 && l < peak, "{l} {peak}");
    assert!(likelihood_single_loss(100.0, 0.0, 0.1, &loss, &cal()).is_err());
}

#[test]
fn convolution_matches_monte_carlo() {
    let (mu, s) = q0_params(&cal(), 0.1).unwrap();
    let q_l = loss_q(500.0, 950.0, 3.44);
    let xs = sample_p1_seeded(1_000_000, mu, s, q_l, 5);
    for q_m in [3000.0, 4500.0, 5400.0] {
        let sigma = 0.05 * q_m;
        let mc = mean(&xs.iter().map(|&q| normal_pdf(q_m, q, sigma)).collect::<Vec<_>>());
        let l = ln_likelihood_single(q_m, sigma, mu, s, q_l).unwrap().exp();
        assert!((l / mc - 1.0).abs() < 0.02, "{q_m}: {l} vs {mc}");
    }
}

#[test]
fn p3_properties() {
    let (mu_l, s_l, lam) = (500f64.ln(), 0.5, 950.0);
    let c = loss_q_per_um(lam, 3.44);
    // mode on the Q_l scale is c · exp(µ_l − s_l²)
    let mode = c * (mu_l - s_l * s_l).exp();
    let p0 = p3_density(mode, mu_l, s_l, lam, 3.44).unwrap();
    for f in [0.99, 1.01] {
        assert!(p3_density(mode * f, mu_l, s_l, lam, 3.44).unwrap() < p0);
    }
    let m = crate::numeric::quad::integrate(
        |y: f64| {
            let q = y.exp();
            p3_density(q, mu_l, s_l, lam, 3.44).unwrap() * q
        },
        (c * 500.0).ln() - 12.0 * s_l,
        (c * 500.0).ln() + 12.0 * s_l,
        0.0,
        1e-12,
    )
    .unwrap()
    .value;
    assert!((m - 1.0).abs() < 1e-8, "{m}");
    assert!(p3_density(-1.0, mu_l, s_l, lam, 3.44).is_err());
    assert!(p3_density(1.0, mu_l, 0.0, lam, 3.44).is_err());
}

#[test]
fn mean_loss_length_values() {
    assert_eq!(mean_loss_length(6.0, 0.0).unwrap(), 6f64.exp());
    let ld = mean_loss_length(500f64.ln(), 0.5).unwrap();
    assert!((ld - 566.6).abs() < 0.05, "{ld}");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = LogNormal::new(500f64.ln(), 0.5).unwrap();
    let m: f64 = (0..1_000_000).map(|_| d.sample(&mut rng)).sum::<f64>() / 1e6;
    assert!((m / ld - 1.0).abs() < 0.01, "{m}");
    assert!(mean_loss_length(1.0, -0.1).is_err());
}

#[test]
fn narrow_loss_distribution_is_single_loss() {
    let lam = 950.0;
    let single = LossModel::single(500.0, lam).unwrap();
    let dist = LossModel::distributed(500f64.ln(), 1e-4, lam).unwrap();
    for q in [2000.0, 4000.0, 5000.0] {
        let a = p1_density(q, 0.1, &single, &cal()).unwrap();
        let b = likelihood_distributed_loss(q, 0.1, &dist, &cal()).unwrap();
        assert!((b / a - 1.0).abs() < 1e-3, "{q}: {b} vs {a}");
    }
}

#[test]
fn distributed_loss_softens_cutoff() {
    let lam = 950.0;
    let q_l = loss_q(500.0, lam, 3.44);
    let dist = LossModel::distributed(500f64.ln(), 0.5, lam).unwrap();
    for f in [1.0, 1.2, 2.0] {
        assert!(likelihood_distributed_loss(f * q_l, 0.1, &dist, &cal()).unwrap() > 0.0);
    }
}

#[test]
fn distributed_loss_matches_double_sampling() {
    let lam = 950.0;
    let (mu_l, s_l) = (500f64.ln(), 0.6);
    let (mu, s) = q0_params(&cal(), 0.1).unwrap();
    let c = loss_q_per_um(lam, 3.44);
    let dist = LossModel::distributed(mu_l, s_l, lam).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let nl = Normal::new(mu_l, s_l).unwrap();
    let draws: Vec<f64> = (0..400_000).map(|_| c * nl.sample(&mut rng).exp()).collect();
    for q in [1500.0, 4000.0, 7000.0] {
        let mc = mean(&draws.iter().map(|&ql| ln_p1(q, mu, s, ql).exp()).collect::<Vec<_>>());
        let l = likelihood_distributed_loss(q, 0.1, &dist, &cal()).unwrap();
        assert!((l / mc - 1.0).abs() < 0.02, "{q}: {l} vs {mc}");
    }
}

#[test]
fn distributed_quadrature_converged() {
    let lam = 950.0;
    let rule = GaussLegendre::new(128);
    for (x, mu_l, s_l) in [(0.1, 500f64.ln(), 0.5), (0.03, 300f64.ln(), 2.0), (1.0, 4000f64.ln(), 0.05)] {
        let dist = LossModel::distributed(mu_l, s_l, lam).unwrap();
        for q in [500.0, 3000.0, 9000.0] {
            let a = likelihood_distributed_loss(q, x, &dist, &cal()).unwrap();
            let b = likelihood_distributed_loss_with(q, x, &dist, &cal(), &rule).unwrap();
            if b > 1e-300 {
                assert!((a / b - 1.0).abs() < 1e-4, "{x} {mu_l} {s_l} {q}: {a} vs {b}");
            }
        }
    }
}

fn dataset(q: Vec<f64>, rel_sigma: f64) -> QDataset {
    let sigma = q.iter().map(|v| v * rel_sigma).collect();
    QDataset::new(
        q,
        sigma,
        DatasetMeta {
            delta_label: None,
            lambda_range: Some((940.0, 960.0)),
            sample_length_um: 100.0,
        },
    )
    .unwrap()
}

fn small_grid() -> GridSpec {
    GridSpec {
        xi_um: AxisSpec::new(2.0, 60.0, 16, true),
        loss_um: AxisSpec::new(100.0, 3000.0, 16, true),
        mu_l: AxisSpec::new(100f64.ln(), 3000f64.ln(), 10, false),
        s_l: AxisSpec::new(0.1, 1.5, 8, false),
    }
}

#[test]
fn single_datum_posterior_is_its_likelihood() {
    let ds = dataset(vec![4000.0], 0.05);
    let settings = PosteriorSettings {
        grids: small_grid(),
        ..Default::default()
    };
    let post = posterior(&ds, &cal(), &settings).unwrap();
    let total: f64 = post.probabilities().iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
    let xi = &post.axes[0].values;
    let ls = &post.axes[1].values;
    let lik = |i: usize, j: usize| {
        let loss = LossModel::single(ls[j], 950.0).unwrap();
        likelihood_single_loss(4000.0, 200.0, xi[i] / 100.0, &loss, &cal()).unwrap()
    };
    let m = map_estimate(&post);
    let (i0, j0) = (m.index[0], m.index[1]);
    let base = post.log_posterior[i0 * ls.len() + j0] - lik(i0, j0).ln();
    for (i, j) in [(3, 4), (10, 2), (15, 15), (0, 0)] {
        let lp = post.log_posterior[i * ls.len() + j];
        let want = lik(i, j).ln() + base;
        assert!(lp == want || (lp - want).abs() < 1e-9, "{i} {j}: {lp} vs {want}");
    }
}

#[test]
fn posterior_permutation_invariant() {
    let (mu, s) = q0_params(&cal(), 0.1).unwrap();
    let q = sample_p1_seeded(40, mu, s, loss_q(500.0, 950.0, 3.44), 3);
    let mut r = q.clone();
    r.reverse();
    r.swap(3, 17);
    let settings = PosteriorSettings {
        grids: small_grid(),
        ..Default::default()
    };
    let a = posterior(&dataset(q, 0.05), &cal(), &settings).unwrap();
    let b = posterior(&dataset(r, 0.05), &cal(), &settings).unwrap();
    assert!(a.log_posterior.iter().zip(&b.log_posterior).all(|(x, y)| x.to_bits() == y.to_bits()));
    let d = PosteriorSettings {
        model: ModelKind::Distributed,
        ..settings
    };
    let a = posterior(&dataset(sample_p1_seeded(30, mu, s, 4000.0, 4), 0.05), &cal(), &d).unwrap();
    let mut q2 = sample_p1_seeded(30, mu, s, 4000.0, 4);
    q2.reverse();
    let b = posterior(&dataset(q2, 0.05), &cal(), &d).unwrap();
    assert_eq!(a.log_posterior, b.log_posterior);
}

#[test]
fn map_of_constructed_grid() {
    let mut post = PosteriorGrid {
        model: ModelKind::Single,
        axes: vec![
            Axis { name: "xi_um".into(), values: vec![1.0, 2.0, 3.0, 4.0] },
            Axis { name: "loss_um".into(), values: vec![10.0, 20.0, 30.0] },
        ],
        log_posterior: vec![(1.0f64 / 12.0).ln(); 12],
        log_normalization: 0.0,
        sample_length_um: 100.0,
        wavelength_nm: 950.0,
        group_index: 3.44,
        data_count: 1,
    };
    let flat = map_estimate(&post);
    assert_eq!(flat.index, vec![0, 0]);
    assert!(flat.degenerate && flat.on_boundary);
    assert_eq!(flat.credible_region.len(), 12);

    post.log_posterior = (0..12)
        .map(|i| -(((i / 3) as f64 - 2.0).powi(2) + ((i % 3) as f64 - 1.0).powi(2)))
        .collect();
    let m = map_estimate(&post);
    assert_eq!(m.index, vec![2, 1]);
    assert_eq!(m.xi_um, 3.0);
    assert_eq!(m.loss, MapLoss::Single { length_um: 20.0 });
    assert!(!m.degenerate && !m.on_boundary);
}

#[test]
fn all_zero_likelihood_is_model_mismatch() {
    // Q far above every loss cap on the grid, with a tiny uncertainty
    let ds = dataset(vec![1e9], 1e-6);
    let settings = PosteriorSettings {
        grids: small_grid(),
        ..Default::default()
    };
    let e = posterior(&ds, &cal(), &settings).unwrap_err();
    assert!(matches!(e, Error::ModelMismatch(_)), "{e}");
}

#[test]
fn recovers_truth_on_a_few_seeds() {
    let (mu, s) = q0_params(&cal(), 0.1).unwrap();
    let q_l = loss_q(500.0, 950.0, 3.44);
    let mut hits = 0;
    for seed in 0..4 {
        let q = sample_p1_seeded(100, mu, s, q_l, 1000 + seed);
        let post = posterior(&dataset(q, 0.05), &cal(), &PosteriorSettings::default()).unwrap();
        let m = map_estimate(&post);
        if (m.xi_um / 10.0 - 1.0).abs() < 0.2 && (m.loss.length_um() / 500.0 - 1.0).abs() < 0.3 {
            hits += 1;
        }
    }
    assert!(hits >= 3, "{hits}");
}

#[test]
fn wider_distribution_means_shorter_xi() {
    // same median Q, different spread of ln Q
    let base = sample_p1_seeded(200, 0.0, 1.0, f64::INFINITY, 12);
    let make = |spread: f64| -> Vec<f64> { base.iter().map(|z| (8.5 + spread * z.ln()).exp()).collect() };
    let settings = PosteriorSettings {
        grids: GridSpec {
            loss_um: AxisSpec::new(1e4, 1e5, 8, true),
            ..GridSpec::default()
        },
        ..Default::default()
    };
    let narrow = map_estimate(&posterior(&dataset(make(0.8), 0.05), &cal(), &settings).unwrap());
    let wide = map_estimate(&posterior(&dataset(make(1.6), 0.05), &cal(), &settings).unwrap());
    assert!(wide.xi_um < narrow.xi_um, "{} vs {}", wide.xi_um, narrow.xi_um);
}

#[test]
fn many_data_stay_finite() {
    let (mu, s) = q0_params(&cal(), 0.1).unwrap();
    let q = sample_p1_seeded(10_000, mu, s, loss_q(500.0, 950.0, 3.44), 77);
    let settings = PosteriorSettings {
        grids: GridSpec {
            xi_um: AxisSpec::new(5.0, 20.0, 6, true),
            loss_um: AxisSpec::new(300.0, 800.0, 6, true),
            ..GridSpec::default()
        },
        ..Default::default()
    };
    let post = posterior(&dataset(q, 0.05), &cal(), &settings).unwrap();
    assert!(post.log_posterior.iter().all(|v| !v.is_nan()));
    let total: f64 = post.probabilities().iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn posterior_exports() {
    let ds = dataset(vec![3000.0, 4000.0, 5000.0], 0.05);
    let settings = PosteriorSettings {
        grids: small_grid(),
        ..Default::default()
    };
    let post = posterior(&ds, &cal(), &settings).unwrap();
    let back = PosteriorGrid::from_json(&post.to_json().unwrap()).unwrap();
    assert_eq!(back.log_posterior, post.log_posterior);
    assert!(post.log_posterior.iter().any(|v| v.is_infinite()));
    let csv = post.to_csv();
    assert!(csv.starts_with("xi_um,loss_um,log_posterior\n"));
    assert_eq!(csv.lines().count(), 1 + 16 * 16);
    let m: f64 = post.marginal(0).iter().sum();
    assert!((m - 1.0).abs() < 1e-9);
}

#[test]
fn loss_table_integrates_to_one() {
    let rows = loss_length_table(500f64.ln(), 0.5, 950.0, 3.44, 2001).unwrap();
    let mass: f64 = rows
        .windows(2)
        .map(|w| 0.5 * (w[0].density_per_um + w[1].density_per_um) * (w[1].length_um - w[0].length_um))
        .sum();
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    assert!((rows[1000].length_um - 500.0).abs() < 1e-6);
}

#[test]
fn measurement_noise_has_requested_spread() {
    let q = vec![1000.0; 20_000];
    let sigma = vec![50.0; 20_000];
    let noisy = add_measurement_noise(&q, &sigma, 4).unwrap();
    let m = stats::mean(&noisy);
    let sd = stats::std_dev(&noisy);
    assert!((m - 1000.0).abs() < 3.0 * 50.0 / (20_000f64).sqrt() * 1.5, "{m}");
    assert!((sd / 50.0 - 1.0).abs() < 0.03, "{sd}");
    assert_eq!(noisy, add_measurement_noise(&q, &sigma, 4).unwrap());
    assert!(add_measurement_noise(&[1.0], &[2.0], 0).is_err());
    assert!(add_measurement_noise(&[1.0, 2.0], &[0.1], 0).is_err());
}
