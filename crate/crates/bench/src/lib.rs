//! Fixed inputs shared by the benchmarks, so that timings refer to the same
//! workload from run to run.

use anderloc_core::calibration::Calibration;
use anderloc_core::inference::{loss_q, q0_params, sample_p1_seeded, AxisSpec, GridSpec};
use anderloc_core::spectra::{DatasetMeta, QDataset};
use anderloc_core::{generate_stack, DisorderedStack, StackSpec};

/// 100 µm stack of 10⁴ layers at `Δn = 0.78`.
pub fn reference_stack() -> DisorderedStack {
    let spec = StackSpec::default().with_delta_n(0.78);
    generate_stack(&spec, 42).expect("default stack spec is valid")
}

/// `n` Q factors from the single-loss model at `ξ/L = 0.1`, `l = 500 µm`,
/// with 5 % uncertainties.
pub fn reference_dataset(n: usize) -> QDataset {
    let (mu, s) = q0_params(&Calibration::reference(), 0.1).expect("inside the nominal laws");
    let q = sample_p1_seeded(n, mu, s, loss_q(500.0, 950.0, 3.44), 7);
    let sigma = q.iter().map(|v| 0.05 * v).collect();
    let meta = DatasetMeta {
        delta_label: None,
        lambda_range: Some((947.5, 952.5)),
        sample_length_um: 100.0,
    };
    QDataset::new(q, sigma, meta).expect("positive samples")
}

/// A 16 × 16 (× 8) grid, small enough to time whole posteriors.
pub fn small_grid() -> GridSpec {
    GridSpec {
        xi_um: AxisSpec::new(2.0, 50.0, 16, true),
        loss_um: AxisSpec::new(100.0, 3000.0, 16, true),
        mu_l: AxisSpec::new(100f64.ln(), 3000f64.ln(), 16, false),
        s_l: AxisSpec::new(0.1, 1.5, 8, false),
    }
}
