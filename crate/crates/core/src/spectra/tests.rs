use super::*;
use crate::numeric::quad::integrate;
use proptest::prelude::*;

fn grid(a: f64, b: f64, step: f64) -> Vec<f64> {
    let n = ((b - a) / step).round() as usize + 1;
    (0..n).map(|i| a + step * i as f64).collect()
}

fn mode(center: f64, fwhm: f64, amp: f64) -> SynthMode {
    SynthMode {
        center_nm: center,
        fwhm_nm: fwhm,
        amplitude: amp,
        profile: ModeProfile::Uniform,
    }
}

fn res(center: f64, fwhm: f64, z: f64, amp: f64) -> Resonance {
    Resonance {
        center_nm: center,
        fwhm_nm: fwhm,
        amplitude: amp,
        q: center / fwhm,
        q_err: 0.01 * center / fwhm,
        position_um: z,
        center_err_nm: 0.0,
        fwhm_err_nm: 0.0,
        apparent_fwhm_nm: fwhm,
        irf_fwhm_nm: 0.0,
    }
}

/// Voigt profile by direct quadrature of the convolution integral.
fn voigt_value(x: f64, fl: f64, fg: f64) -> f64 {
    let sigma = fg / FWHM_PER_SIGMA;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    integrate(
        |t| lorentzian(x - t, 0.0, fl, 1.0) * norm * (-0.5 * (t / sigma).powi(2)).exp(),
        -10.0 * sigma,
        10.0 * sigma,
        1e-14,
        1e-12,
    )
    .unwrap()
    .value
}

fn voigt_fwhm_numeric(fl: f64, fg: f64) -> f64 {
    let half = 0.5 * voigt_value(0.0, fl, fg);
    let (mut a, mut b) = (0.0, 2.0 * (fl + fg));
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if voigt_value(m, fl, fg) > half {
            a = m;
        } else {
            b = m;
        }
    }
    a + b
}

#[test]
fn noiseless_lorentzian_is_exact() {
    let g = grid(949.0, 951.0, 0.005);
    let s = synth_spectrum(&[mode(950.0, 0.1, 3.0)], 0.0, 0.0, 0.0, &g, 1).unwrap();
    let peak = s.scan.values.iter().fold(0.0f64, |a, &v| a.max(v));
    assert!((peak - 3.0).abs() < 1e-12);
    assert_eq!(s.scan.kind, SpectrumKind::Intensity);
}

#[test]
fn synthesis_is_seeded() {
    let g = grid(949.0, 951.0, 0.005);
    let m = [mode(950.0, 0.1, 1.0)];
    let a = synth_spectrum(&m, 1.0, 0.05, 0.05, &g, 9).unwrap();
    let b = synth_spectrum(&m, 1.0, 0.05, 0.05, &g, 9).unwrap();
    let c = synth_spectrum(&m, 1.0, 0.05, 0.05, &g, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn coarse_grid_is_rejected() {
    let g = grid(949.0, 951.0, 0.05);
    let err = synth_spectrum(&[mode(950.0, 0.1, 1.0)], 0.0, 0.0, 0.0, &g, 1).unwrap_err();
    assert!(matches!(err, Error::UnderResolved(_)));
}

#[test]
fn synthesized_voigt_matches_quadrature() {
    let g = grid(949.5, 950.5, 0.005);
    let s = synth_spectrum(&[mode(950.0, 0.05, 1.0)], 0.0, 0.0, 0.05, &g, 1).unwrap();
    for (i, &x) in g.iter().enumerate().step_by(17) {
        let exact = voigt_value(x - 950.0, 0.05, 0.05);
        assert!((s.scan.values[i] - exact).abs() < 1e-6, "{x}: {} vs {exact}", s.scan.values[i]);
    }
}

#[test]
fn olivero_width_against_quadrature() {
    for (fl, fg) in [(0.05, 0.05), (0.1, 0.05), (0.02, 0.05)] {
        let numeric = voigt_fwhm_numeric(fl, fg);
        assert!((voigt_fwhm(fl, fg) - numeric).abs() < 3e-4 * numeric, "{fl} {fg}");
    }
    assert!((voigt_fwhm_numeric(0.05, 0.05) - 0.0819).abs() < 1e-4);
}

#[test]
fn fitted_width_of_broadened_line() {
    // A Lorentzian fitted to a Voigt line over ±3 widths is close to, but
    // not identical with, the Voigt FWHM.
    let g = grid(949.0, 951.0, 0.005);
    let s = synth_spectrum(&[mode(950.0, 0.05, 1.0)], 0.0, 0.0, 0.05, &g, 1).unwrap();
    let r = find_resonances(&s, 0.1, 4).unwrap();
    assert_eq!(r.len(), 1);
    let voigt = voigt_fwhm_numeric(0.05, 0.05);
    assert!((r[0].apparent_fwhm_nm - voigt).abs() < 0.06 * voigt, "{}", r[0].apparent_fwhm_nm);
}

#[test]
fn noiseless_single_line_recovered() {
    let g = grid(948.0, 952.0, 0.01);
    let s = synth_spectrum(&[mode(950.137, 0.2, 2.0)], 4.5, 0.0, 0.0, &g, 1).unwrap();
    let r = find_resonances(&s, 0.1, 4).unwrap();
    assert_eq!(r.len(), 1);
    assert!((r[0].center_nm - 950.137).abs() < 1e-3 * 950.137);
    assert!((r[0].fwhm_nm - 0.2).abs() < 1e-3 * 0.2);
    assert_eq!(r[0].position_um, 4.5);
}

#[test]
fn two_separated_lines() {
    let g = grid(948.0, 952.0, 0.01);
    let s = synth_spectrum(&[mode(949.5, 0.1, 1.0), mode(950.5, 0.1, 0.7)], 0.0, 0.02, 0.05, &g, 3).unwrap();
    let mut r = find_resonances(&s, 0.1, 8).unwrap();
    r.sort_by(|a, b| a.center_nm.total_cmp(&b.center_nm));
    assert_eq!(r.len(), 2);
    assert!((r[0].center_nm - 949.5).abs() < 0.01 * 949.5);
    assert!((r[1].center_nm - 950.5).abs() < 0.01 * 950.5);
}

#[test]
fn overlapping_lines_fit_jointly() {
    let g = grid(946.0, 954.0, 0.01);
    let s = synth_spectrum(&[mode(949.6, 0.5, 1.0), mode(950.4, 0.4, 0.8)], 0.0, 0.0, 0.0, &g, 3).unwrap();
    let mut r = find_resonances(&s, 0.05, 8).unwrap();
    r.sort_by(|a, b| a.center_nm.total_cmp(&b.center_nm));
    assert_eq!(r.len(), 2);
    assert!((r[0].fwhm_nm - 0.5).abs() < 1e-4, "{:?}", r[0]);
    assert!((r[1].fwhm_nm - 0.4).abs() < 1e-4, "{:?}", r[1]);
}

#[test]
fn flat_spectrum_has_no_lines() {
    let g = grid(940.0, 960.0, 0.1);
    let scan = SpectrumScan::new(g.clone(), vec![1.0; g.len()], SpectrumKind::Intensity).unwrap();
    let s = PositionedSpectrum::new(0.0, scan, 0.05).unwrap();
    assert!(find_resonances(&s, 0.1, 10).unwrap().is_empty());
    let short = SpectrumScan::new(g[..10].to_vec(), vec![1.0; 10], SpectrumKind::Intensity).unwrap();
    assert!(find_resonances(&PositionedSpectrum::new(0.0, short, 0.0).unwrap(), 0.1, 10).is_err());
}

#[test]
fn pure_noise_yields_few_lines() {
    let g = grid(940.0, 960.0, 0.01);
    let s = synth_spectrum(&[mode(950.0, 0.1, 1.0)], 0.0, 0.05, 0.0, &g, 5).unwrap();
    let r = find_resonances(&s, 0.1, 50).unwrap();
    assert_eq!(r.len(), 1, "{r:?}");
}

#[test]
fn broad_line_survives_noise_bumps() {
    // Q = 200: the line spans a third of the scan, so noise maxima on its
    // flank become extra candidates
    let g = grid(935.0, 965.0, 0.015);
    let mut seen = 0;
    for seed in 0..30 {
        let s = synth_spectrum(&[mode(948.25, 948.25 / 200.0, 1.0)], 0.0, 0.05, 0.05, &g, seed).unwrap();
        let r = find_resonances(&s, 0.05, 64).unwrap();
        let near: Vec<_> = r.iter().filter(|r| (r.center_nm - 948.25).abs() < 0.5).collect();
        if let [one] = near[..] {
            seen += 1;
            assert!((one.q / 200.0 - 1.0).abs() < 0.1, "{}", one.q);
        }
    }
    assert_eq!(seen, 30);
}

#[test]
fn deconvolution() {
    let r = res(950.0, 0.08, 0.0, 1.0);
    assert_eq!(deconvolve_irf(&r, 0.0).unwrap(), r);

    let apparent = voigt_fwhm_numeric(0.05, 0.05);
    let d = deconvolve_irf(&res(950.0, apparent, 0.0, 1.0), 0.05).unwrap();
    assert!((d.fwhm_nm - 0.05).abs() < 0.01 * 0.05, "{}", d.fwhm_nm);
    assert!((d.q - 950.0 / d.fwhm_nm).abs() < 1e-9);
    assert!(d.correction() > 0.3);
    assert_eq!(d.irf_fwhm_nm, 0.05);

    let err = deconvolve_irf(&res(950.0, 0.9 * 0.05, 0.0, 1.0), 0.05).unwrap_err();
    assert!(matches!(err, Error::ResolutionLimited { .. }));
    // intrinsic width a tenth of the instrument: apparent width above 0.9 irf
    // but still flagged
    let narrow = voigt_fwhm_numeric(0.005, 0.05);
    assert!(narrow > 0.9 * 0.05);
    let err = deconvolve_irf(&res(950.0, narrow, 0.0, 1.0), 0.05).unwrap_err();
    assert!(matches!(err, Error::ResolutionLimited { .. }));
    assert!(lorentz_fwhm_from_voigt(0.04, 0.05).is_none());
}

#[test]
fn inversion_round_trip() {
    for fl in [0.001, 0.01, 0.05, 0.3, 2.0] {
        let v = voigt_fwhm(fl, 0.05);
        let back = lorentz_fwhm_from_voigt(v, 0.05).unwrap();
        assert!((back - fl).abs() < 1e-12 * fl.max(1.0), "{fl} {back}");
    }
}

#[test]
fn grouping_basics() {
    let rs = [res(950.0, 0.1, 10.0, 1.0), res(950.01, 0.1, 10.3, 2.0), res(949.99, 0.1, 10.6, 0.5)];
    let m = group_modes(&rs, 0.5, 1.0);
    assert_eq!(m.len(), 1);
    assert!((m[0].z_m_um - 0.6).abs() < 1e-12);
    assert_eq!(m[0].q_best, 950.01 / 0.1);

    let rs = [res(950.0, 0.1, 10.0, 1.0), res(952.0, 0.1, 10.0, 1.0)];
    assert_eq!(group_modes(&rs, 0.5, 1.0).len(), 2);

    // same wavelength, far apart along the sample: two modes
    let rs = [res(950.0, 0.1, 10.0, 1.0), res(950.0, 0.1, 30.0, 1.0)];
    let m = group_modes(&rs, 0.5, 1.0);
    assert_eq!(m.len(), 2);
    assert!(m.iter().all(|m| m.z_m_um == 0.0));
}

#[test]
fn chains_are_split_when_too_wide() {
    // a chain of small steps drifting over many linewidths
    let rs: Vec<Resonance> = (0..20).map(|i| res(950.0 + 0.04 * i as f64, 0.1, 5.0, 1.0)).collect();
    let m = group_modes(&rs, 0.5, 1.0);
    assert!(m.len() > 1);
    for r in &m {
        let span = r.members.last().unwrap().center_nm - r.members[0].center_nm;
        assert!(span <= 3.0 * 0.5 * 0.1 + 1e-12);
    }
    assert_eq!(m.iter().map(|r| r.members.len()).sum::<usize>(), 20);
}

#[test]
fn dataset_counts_modes_once() {
    let mut rs = Vec::new();
    for k in 0..3 {
        for j in 0..5 {
            rs.push(res(940.0 + 5.0 * k as f64, 0.2, 10.0 * k as f64 + 0.3 * j as f64, 1.0 + j as f64));
        }
    }
    let modes = group_modes(&rs, 0.5, 1.0);
    assert_eq!(modes.len(), 3);
    let ds = build_qdataset(
        &modes,
        DatasetMeta {
            delta_label: Some(3.0),
            lambda_range: None,
            sample_length_um: 100.0,
        },
    )
    .unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.lambda_range, (940.0, 950.0));
    // fit errors of 1 % fall back to the 5 % floor
    for (q, s) in ds.q.iter().zip(&ds.sigma_q) {
        assert!((s - 0.05 * q).abs() < 1e-9);
    }
    let back = QDataset::from_json(&ds.to_json().unwrap()).unwrap();
    assert_eq!(back, ds);
    assert!(matches!(build_qdataset(&[], DatasetMeta::default()), Err(Error::EmptyDataset(_))));
}

#[test]
fn dataset_json_keys() {
    let ds = QDataset::new(
        vec![1000.0],
        vec![50.0],
        DatasetMeta {
            delta_label: None,
            lambda_range: Some((940.0, 960.0)),
            sample_length_um: 100.0,
        },
    )
    .unwrap();
    let v: serde_json::Value = serde_json::from_str(&ds.to_json().unwrap()).unwrap();
    for k in ["q", "sigma_q", "delta_label", "lambda_range", "sample_length_um"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert!(QDataset::from_json(r#"{"q":[-1],"sigma_q":[1],"lambda_range":[1,2],"sample_length_um":1}"#).is_err());
}

#[test]
fn csv_round_trip_and_errors() {
    let g = grid(949.0, 951.0, 0.01);
    let a = synth_spectrum(&[mode(950.0, 0.1, 1.0)], 0.0, 0.01, 0.05, &g, 1).unwrap();
    let b = synth_spectrum(&[mode(950.0, 0.1, 1.0)], 0.3, 0.01, 0.05, &g, 2).unwrap();
    let text = spectra_to_csv(&[a.clone(), b.clone()]);
    assert!(text.starts_with("position_um,wavelength_nm,counts\n"));
    let back = spectra_from_csv(&text, "s.csv", 0.05).unwrap();
    assert_eq!(back, vec![a, b]);

    let bad = "position_um,wavelength_nm,counts\n0,950,1\n0,950.1,oops\n";
    let err = spectra_from_csv(bad, "bad.csv", 0.05).unwrap_err().to_string();
    assert!(err.starts_with("bad.csv:3:"), "{err}");
}

#[test]
fn extraction_pipeline_on_three_modes() {
    let g = grid(940.0, 960.0, 0.01);
    let truth = [
        SynthMode {
            center_nm: 944.0,
            fwhm_nm: 0.3,
            amplitude: 1.0,
            profile: ModeProfile::Exponential { center_um: 5.0, decay_um: 1.0 },
        },
        SynthMode {
            center_nm: 950.0,
            fwhm_nm: 0.15,
            amplitude: 1.0,
            profile: ModeProfile::Exponential { center_um: 6.0, decay_um: 1.0 },
        },
        SynthMode {
            center_nm: 956.0,
            fwhm_nm: 0.6,
            amplitude: 1.0,
            profile: ModeProfile::Exponential { center_um: 5.5, decay_um: 1.0 },
        },
    ];
    let spectra: Vec<PositionedSpectrum> = (0..=40)
        .map(|i| synth_spectrum(&truth, 0.3 * i as f64, 0.02, 0.05, &g, i).unwrap())
        .collect();
    let ex = extract_modes(&spectra, &ExtractionSettings::default()).unwrap();
    assert_eq!(ex.modes.len(), 3, "{:?}", ex.modes.iter().map(|m| m.center_nm).collect::<Vec<_>>());
    for (m, t) in ex.modes.iter().zip(&truth) {
        let b = m.best();
        assert!((b.q - t.q()).abs() < 3.0 * b.q_err.max(0.05 * b.q), "{} vs {}", b.q, t.q());
        assert!(m.z_m_um > 0.5);
    }
}

fn arb_res() -> impl Strategy<Value = Resonance> {
    (0usize..40, 0usize..30, 0.05f64..0.3, 0.1f64..2.0)
        .prop_map(|(c, z, w, a)| res(945.0 + 0.05 * c as f64, w, 0.3 * z as f64, a))
}

proptest! {
    #[test]
    fn grouping_is_order_independent(rs in prop::collection::vec(arb_res(), 1..60), seed in any::<u64>()) {
        let a = group_modes(&rs, 0.5, 1.0);
        let mut shuffled = rs.clone();
        // Fisher–Yates with a simple LCG keyed by `seed`
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(&group_modes(&shuffled, 0.5, 1.0), &a);
    }

    #[test]
    fn grouping_is_idempotent(rs in prop::collection::vec(arb_res(), 1..60)) {
        let a = group_modes(&rs, 0.5, 1.0);
        let flat: Vec<Resonance> = a.iter().flat_map(|m| m.members.clone()).collect();
        prop_assert_eq!(group_modes(&flat, 0.5, 1.0), a.clone());
        prop_assert_eq!(flat.len(), rs.len());
        for m in &a {
            prop_assert!(m.z_m_um >= 0.0 && m.z_m_um <= 0.3 * 29.0 + 1e-9);
        }
    }
}
