use std::path::Path;
use std::process::{Command, Output};

use anderloc_core::spectra::{spectra_to_csv, synth_spectrum, ModeProfile, SynthMode};
use serde_json::Value;

fn anderloc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anderloc"))
        .current_dir(dir)
        .env_remove("ANDERLOC_OUT")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let o = anderloc(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn error_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr is not empty");
    serde_json::from_str(line).expect("error is JSON")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn same_tree(a: &Path, b: &Path) {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut other: Vec<_> = std::fs::read_dir(b).unwrap().map(|e| e.unwrap().file_name()).collect();
    other.sort();
    assert_eq!(names, other);
    for n in names {
        assert_eq!(
            std::fs::read(a.join(&n)).unwrap(),
            std::fs::read(b.join(&n)).unwrap(),
            "{n:?} differs"
        );
    }
}

#[test]
fn simulate_is_byte_identical_across_runs_and_workers() {
    let t = tempfile::tempdir().unwrap();
    let base = ["simulate", "--realizations", "10", "--delta-n", "0.5", "--seed", "7"];
    for (out, workers) in [("a", "1"), ("b", "1"), ("c", "8")] {
        let mut args = base.to_vec();
        args.extend(["--out", out, "--workers", workers, "--green-positions-um", "10,50"]);
        ok(t.path(), &args);
    }
    same_tree(&t.path().join("a"), &t.path().join("b"));
    same_tree(&t.path().join("a"), &t.path().join("c"));
    let m = read_json(&t.path().join("a/simulate-manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["stack"]["delta_n"], 0.5);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    let csv = std::fs::read_to_string(t.path().join("a/transmission.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10 * 11);
    let green = std::fs::read_to_string(t.path().join("a/green.csv")).unwrap();
    assert_eq!(green.lines().count(), 1 + 10 * 11 * 2);
}

#[test]
fn zero_realizations_is_a_usage_error() {
    let t = tempfile::tempdir().unwrap();
    let o = anderloc(t.path(), &["simulate", "--realizations", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_json(&o)["error"]["class"], "usage");

    std::fs::write(t.path().join("c.toml"), "[simulate]\nrealizations = 0\n").unwrap();
    let o = anderloc(t.path(), &["simulate", "--config", "c.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_flags_and_manifest_replay() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(
        t.path().join("run.toml"),
        "[simulate]\nrealizations = 3\nseed = 11\nwavelength_points = 2\n[simulate.stack]\ndelta_n = 0.4\nsample_length_um = 20.0\n",
    )
    .unwrap();
    ok(t.path(), &["simulate", "--config", "run.toml", "--seed", "12", "--out", "first"]);
    let m = read_json(&t.path().join("first/simulate-manifest.json"));
    assert_eq!(m["config"]["realizations"], 3);
    assert_eq!(m["config"]["seed"], 12);
    assert_eq!(m["config"]["stack"]["sample_length_um"], 20.0);
    ok(t.path(), &["simulate", "--config", "first/simulate-manifest.json", "--out", "again"]);
    same_tree(&t.path().join("first"), &t.path().join("again"));

    let o = anderloc(t.path(), &["infer", "--config", "first/simulate-manifest.json"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(t.path().join("typo.toml"), "realisations = 3\n").unwrap();
    let o = anderloc(t.path(), &["simulate", "--config", "typo.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_directory_from_environment() {
    let t = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_anderloc"))
        .current_dir(t.path())
        .env("ANDERLOC_OUT", "from-env")
        .args(["synth", "--count", "5"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(t.path().join("from-env/dataset.json").exists());
    assert!(t.path().join("from-env/synth-manifest.json").exists());
}

#[test]
fn calibrate_refuses_short_grids() {
    let t = tempfile::tempdir().unwrap();
    let o = anderloc(t.path(), &["calibrate", "--grid", "0.05,0.1,0.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_json(&o)["error"]["message"].as_str().unwrap().contains("4 grid points"));
}

fn three_mode_csv(dir: &Path) {
    let grid: Vec<f64> = (0..=2000).map(|i| 940.0 + 0.01 * i as f64).collect();
    let truth = [(944.0, 0.3, 5.0), (950.0, 0.15, 6.0), (956.0, 0.6, 5.5)].map(|(c, w, z)| SynthMode {
        center_nm: c,
        fwhm_nm: w,
        amplitude: 1.0,
        profile: ModeProfile::Exponential { center_um: z, decay_um: 1.0 },
    });
    let spectra: Vec<_> = (0..=40)
        .map(|i| synth_spectrum(&truth, 0.3 * i as f64, 0.02, 0.05, &grid, i).unwrap())
        .collect();
    std::fs::write(dir.join("scan.csv"), spectra_to_csv(&spectra)).unwrap();
}

#[test]
fn extract_three_modes() {
    let t = tempfile::tempdir().unwrap();
    three_mode_csv(t.path());
    ok(t.path(), &["extract", "scan.csv", "--out", "ex"]);
    let ds = read_json(&t.path().join("ex/dataset.json"));
    assert_eq!(ds["q"].as_array().unwrap().len(), 3);
    let table = std::fs::read_to_string(t.path().join("ex/modes.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    let m = read_json(&t.path().join("ex/extract-manifest.json"));
    assert_eq!(m["summary"]["modes"], 3);
    assert!(m["summary"]["resolution_limited_excluded"].is_u64());
}

#[test]
fn malformed_csv_names_file_and_line() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(
        t.path().join("bad.csv"),
        "position_um,wavelength_nm,counts\n0,950,1\n0,950.1,x\n",
    )
    .unwrap();
    let o = anderloc(t.path(), &["extract", "bad.csv"]);
    assert_eq!(o.status.code(), Some(3));
    let msg = error_json(&o)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("bad.csv:3"), "{msg}");
}

const SMALL_GRID: &str = r#"
[infer.grids.xi_um]
min = 2.0
max = 50.0
points = 12
log = true
[infer.grids.loss_um]
min = 100.0
max = 3000.0
points = 12
log = true
[infer.grids.mu_l]
min = 4.6
max = 8.0
points = 8
log = false
[infer.grids.s_l]
min = 0.1
max = 1.5
points = 6
log = false
"#;

#[test]
fn infer_outputs_for_both_models() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("grid.toml"), SMALL_GRID).unwrap();
    ok(t.path(), &["synth", "--count", "60", "--seed", "4", "--out", "d"]);
    ok(t.path(), &["infer", "--config", "grid.toml", "--dataset", "d/dataset.json", "--out", "s"]);
    let map = read_json(&t.path().join("s/map.json"));
    assert_eq!(map["model"], "single");
    assert!(map["xi_um"].as_f64().unwrap() > 0.0);
    assert!(map["l_d_um"].is_null());
    assert!(!t.path().join("s/loss_table.csv").exists());
    let csv = std::fs::read_to_string(t.path().join("s/posterior.csv")).unwrap();
    assert!(csv.starts_with("xi_um,loss_um,log_posterior\n"));
    assert_eq!(csv.lines().count(), 1 + 144);

    ok(
        t.path(),
        &["infer", "--config", "grid.toml", "--dataset", "d/dataset.json", "--model", "distributed", "--out", "m"],
    );
    let map = read_json(&t.path().join("m/map.json"));
    assert_eq!(map["model"], "distributed");
    for key in ["xi_um", "l_d_um"] {
        assert!(map[key].as_f64().unwrap() > 0.0, "{key}");
    }
    assert!(map["loss"]["mu_l"].is_f64() && map["loss"]["s_l"].is_f64());
    let table = std::fs::read_to_string(t.path().join("m/loss_table.csv")).unwrap();
    assert!(table.starts_with("length_um,q_l,density_per_um\n"));
    assert_eq!(table.lines().count(), 201);
}

#[test]
fn permuted_dataset_gives_identical_map() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("grid.toml"), SMALL_GRID).unwrap();
    ok(t.path(), &["synth", "--count", "40", "--seed", "9", "--out", "d"]);
    let mut ds = read_json(&t.path().join("d/dataset.json"));
    for key in ["q", "sigma_q"] {
        ds[key].as_array_mut().unwrap().reverse();
    }
    std::fs::write(t.path().join("d/rev.json"), ds.to_string()).unwrap();
    ok(t.path(), &["infer", "--config", "grid.toml", "--dataset", "d/dataset.json", "--out", "a"]);
    ok(t.path(), &["infer", "--config", "grid.toml", "--dataset", "d/rev.json", "--out", "b"]);
    for f in ["map.json", "posterior.json", "posterior.csv"] {
        assert_eq!(
            std::fs::read(t.path().join("a").join(f)).unwrap(),
            std::fs::read(t.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn impossible_data_is_a_model_mismatch() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("grid.toml"), SMALL_GRID).unwrap();
    std::fs::write(
        t.path().join("huge.json"),
        r#"{"q":[1e7,2e7],"sigma_q":[1e3,1e3],"lambda_range":[947.5,952.5],"sample_length_um":100.0}"#,
    )
    .unwrap();
    let o = anderloc(t.path(), &["infer", "--config", "grid.toml", "--dataset", "huge.json"]);
    assert_eq!(o.status.code(), Some(4));
    let e = error_json(&o);
    assert_eq!(e["error"]["code"], "model_mismatch");
    assert!(e["error"]["message"].as_str().unwrap().contains("largest Q"));
}

#[test]
fn intensity_smoke_and_ordering() {
    let t = tempfile::tempdir().unwrap();
    ok(
        t.path(),
        &["intensity", "--constant-field", "true", "--preset", "weak", "--realizations", "2", "--out", "c"],
    );
    let h = read_json(&t.path().join("c/histograms.json"));
    let density = h["intensity"]["probability_density"].as_array().unwrap();
    let edges = h["intensity"]["bin_edges"].as_array().unwrap();
    let nonzero: Vec<usize> = (0..density.len()).filter(|&i| density[i].as_f64().unwrap() > 0.0).collect();
    assert_eq!(nonzero.len(), 1);
    let i = nonzero[0];
    assert!(edges[i].as_f64().unwrap() <= 1.0 && 1.0 < edges[i + 1].as_f64().unwrap());

    let common = ["--realizations", "2", "--wavelength-points", "61", "--position-step-um", "0.9", "--svg", "true"];
    for preset in ["strong", "weak"] {
        let mut args = vec!["intensity", "--preset", preset, "--out", preset];
        args.extend(common);
        ok(t.path(), &args);
    }
    let tail = |p: &str| {
        let m = read_json(&t.path().join(p).join("intensity-manifest.json"));
        let mass = m["summary"]["intensity_mass"].as_f64().unwrap();
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
        m["summary"]["intensity_survival"][1]["probability"].as_f64().unwrap()
    };
    assert!(tail("strong") > tail("weak"));
    assert!(t.path().join("strong/intensity.svg").exists());
    let surv = std::fs::read_to_string(t.path().join("strong/survival.csv")).unwrap();
    assert_eq!(surv.lines().count(), 7);
}

#[test]
fn intensity_from_map_file() {
    let t = tempfile::tempdir().unwrap();
    std::fs::write(t.path().join("grid.toml"), SMALL_GRID).unwrap();
    ok(t.path(), &["synth", "--count", "30", "--sample-length-um", "20", "--out", "d"]);
    ok(t.path(), &["infer", "--config", "grid.toml", "--dataset", "d/dataset.json", "--out", "i"]);
    ok(
        t.path(),
        &["intensity", "--map", "i/map.json", "--realizations", "1", "--wavelength-points", "11", "--position-step-um", "2", "--out", "h"],
    );
    let m = read_json(&t.path().join("h/intensity-manifest.json"));
    assert_eq!(m["config"]["stack"]["sample_length_um"], 20.0);
    assert!(m["config"]["stack"]["loss_length_um"].as_f64().unwrap() > 0.0);
    assert!(m["config"]["stack"]["delta_n"].as_f64().unwrap() > 0.0);
}

#[test]
fn synth_spectra_writes_truth() {
    let t = tempfile::tempdir().unwrap();
    let toml = "[synth]\nkind = \"spectra\"\n[synth.preset]\nmode_count = 4\nsample_length_um = 6.0\nlambda_min_nm = 945.0\nlambda_max_nm = 955.0\n";
    std::fs::write(t.path().join("s.toml"), toml).unwrap();
    ok(t.path(), &["synth", "--config", "s.toml", "--out", "s"]);
    let truth = read_json(&t.path().join("s/truth.json"));
    assert_eq!(truth.as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(t.path().join("s/spectra.csv")).unwrap();
    assert!(csv.starts_with("position_um,wavelength_nm,counts\n"));
}

#[test]
fn help_and_version_exit_zero() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(anderloc(t.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(anderloc(t.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(anderloc(t.path(), &["frobnicate"]).status.code(), Some(2));
}
