use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gpdistill::{Likelihood, ProbabilityMethod};
use gpdistill_cli::data::{
    fmt_f64, gen_classification_toy, gen_regression_toy, read_samples, regression_truth, rng, sample_classification_label,
    write_samples, Table,
};
use gpdistill_cli::experiments::{run_experiment, ExperimentConfig, ExperimentId, Z_975};
use gpdistill_cli::model::{ModelArtifact, ModelSpec, NewtonSettings, PathKind, Prediction, TrainingData, FORMAT_VERSION};
use gpdistill_cli::CliError;
use gpdistill::gpc_distill::TargetKind;
use gpdistill::KernelParams;
use nalgebra::{DMatrix, DVector};

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gpdistill-cli-test-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gpdistill"))
}

#[test]
fn regression_toy_uses_an_even_grid_and_truth() {
    let d = gen_regression_toy(7, true);
    assert_eq!(d.xs.nrows(), 10);
    for i in 0..10 {
        let x = d.xs[(i, 0)];
        assert!((x - 10.0 * i as f64 / 9.0).abs() < 1e-12);
        assert_eq!(d.ys[i], x * x.sin());
        assert_eq!(d.ys[i], regression_truth(x));
    }
    let noisy = gen_regression_toy(7, false);
    assert_eq!(noisy.xs, d.xs);
    assert_ne!(noisy.ys, d.ys);
    assert_eq!(gen_regression_toy(7, false).ys, noisy.ys);
    assert_ne!(gen_regression_toy(8, false).ys, noisy.ys);
}

#[test]
fn classification_toy_inputs_and_labels() {
    let d = gen_classification_toy(3, 500).unwrap();
    assert!(d.xs.iter().all(|&x| (0.0..5.0).contains(&x)));
    assert!(d.ys.iter().all(|&y| y == 0.0 || y == 1.0));
    let again = gen_classification_toy(3, 500).unwrap();
    assert_eq!(d.xs, again.xs);
    assert_eq!(d.ys, again.ys);
    assert!(gen_classification_toy(3, 0).is_err());
}

#[test]
fn label_frequency_at_one_matches_sigmoid_of_two() {
    let mut r = rng(11);
    let n = 100_000;
    let ones: f64 = (0..n).map(|_| sample_classification_label(&mut r, 1.0)).sum();
    let expected = 1.0 / (1.0 + (-2.0f64).exp());
    assert!((expected - 0.8807970779778823).abs() < 1e-15);
    assert!((ones / n as f64 - expected).abs() < 0.01);
}

#[test]
fn csv_samples_round_trip_bit_for_bit() {
    let dir = scratch("csv");
    let xs = DMatrix::from_row_slice(3, 2, &[0.1, -1e-300, 1.0 / 3.0, 2.0f64.sqrt(), 1e300, -0.0]);
    let ys = DVector::from_vec(vec![std::f64::consts::PI, -7.25, 5e-324]);
    let path = dir.join("s.csv");
    write_samples(&path, &xs, Some(&ys)).unwrap();
    assert!(fs::read_to_string(&path).unwrap().starts_with("x1,x2,y\n"));
    let (rx, ry) = read_samples(&path).unwrap();
    let bits = |m: &[f64]| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(rx.as_slice()), bits(xs.as_slice()));
    assert_eq!(bits(ry.unwrap().as_slice()), bits(ys.as_slice()));

    let (_, none) = {
        let p = dir.join("inputs.csv");
        write_samples(&p, &xs, None).unwrap();
        read_samples(&p).unwrap()
    };
    assert!(none.is_none());
}

#[test]
fn csv_with_bad_header_is_a_parse_error() {
    let dir = scratch("badcsv");
    for (name, body) in [("a.csv", "a,b\n1,2\n"), ("b.csv", "x2,y\n1,2\n"), ("c.csv", "x1,y\n1,zz\n"), ("d.csv", "")] {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        assert!(matches!(read_samples(&p), Err(CliError::Parse { .. })), "{name}");
    }
    assert!(matches!(read_samples(&dir.join("missing.csv")), Err(CliError::Io { .. })));
}

fn regression_training() -> TrainingData {
    let d = gen_regression_toy(1, false);
    TrainingData::new("toy", &d.xs, &d.ys)
}

fn classification_training() -> TrainingData {
    let d = gen_classification_toy(1, 20).unwrap();
    TrainingData::new("toy", &d.xs, &d.ys)
}

fn all_specs() -> Vec<(ModelSpec, &'static str, bool)> {
    let schedule = vec![0.1, 0.4, 0.7, 1.0];
    vec![
        (ModelSpec::Gpr { noise: 0.1 }, "gpr", false),
        (ModelSpec::GprData { schedule: schedule.clone(), path: PathKind::Naive }, "gpr-data", false),
        (ModelSpec::GprData { schedule: schedule.clone(), path: PathKind::Spectral }, "gpr-data", false),
        (ModelSpec::GprDist { schedule }, "gpr-dist", false),
        (ModelSpec::Gpc { likelihood: Likelihood::Bernoulli, reg_gamma: 0.0 }, "gpc", true),
        (
            ModelSpec::GpcData {
                steps: 3,
                target_kind: TargetKind::SoftMean,
                distilled_likelihood: Likelihood::ContinuousBernoulli,
                reg_gammas: None,
            },
            "gpc-data",
            true,
        ),
        (ModelSpec::GpcDist { steps: 3, scaled: false }, "gpc-dist", true),
        (ModelSpec::GpcDist { steps: 3, scaled: true }, "gpc-dist", true),
    ]
}

fn assert_same_prediction(a: &Prediction, b: &Prediction) {
    let bits = |v: &DVector<f64>| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    match (a, b) {
        (Prediction::Regression { mean: m1, variance: v1 }, Prediction::Regression { mean: m2, variance: v2 }) => {
            assert_eq!(bits(m1), bits(m2));
            assert_eq!(bits(v1), bits(v2));
        }
        (Prediction::Classification { probability: p1 }, Prediction::Classification { probability: p2 }) => {
            assert_eq!(bits(p1), bits(p2));
        }
        _ => panic!("prediction kinds differ"),
    }
}

#[test]
fn artifacts_round_trip_for_every_method() {
    let dir = scratch("artifacts");
    let kernel = KernelParams::new(1.5, 0.8, 1e-8).unwrap();
    let test_xs = DMatrix::from_column_slice(5, 1, &[-1.0, 0.5, 2.0, 4.5, 9.0]);
    for (i, (spec, tag, classification)) in all_specs().into_iter().enumerate() {
        let training = if classification { classification_training() } else { regression_training() };
        let (artifact, model) = ModelArtifact::fit(spec.clone(), kernel, NewtonSettings::default(), training).unwrap();
        let path = dir.join(format!("m{i}.json"));
        artifact.save(&path).unwrap();

        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(json["model"]["method"], tag);
        assert_eq!(json["format_version"], FORMAT_VERSION);

        let loaded = ModelArtifact::load(&path).unwrap();
        assert_eq!(loaded.model, spec);
        let restored = loaded.restore().unwrap();
        assert_eq!(restored.is_classification(), classification);
        assert_eq!(restored.steps(), model.steps());
        for step in 1..=model.steps() {
            let a = model.predict(&test_xs, step, ProbabilityMethod::Quadrature).unwrap();
            let b = restored.predict(&test_xs, step, ProbabilityMethod::Quadrature).unwrap();
            assert_same_prediction(&a, &b);
            assert!(matches!(a, Prediction::Classification { .. }) == classification);
        }
        assert!(model.predict(&test_xs, 0, ProbabilityMethod::Quadrature).is_err());
        assert!(model.predict(&test_xs, model.steps() + 1, ProbabilityMethod::Quadrature).is_err());
    }
}

#[test]
fn artifact_version_and_corruption_are_detected() {
    let dir = scratch("versions");
    let kernel = KernelParams::new(1.0, 1.0, 1e-8).unwrap();
    let (artifact, _) = ModelArtifact::fit(ModelSpec::Gpr { noise: 0.1 }, kernel, NewtonSettings::default(), regression_training()).unwrap();
    let path = dir.join("m.json");
    artifact.save(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();

    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["format_version"] = serde_json::json!(FORMAT_VERSION + 1);
    let newer = dir.join("newer.json");
    fs::write(&newer, serde_json::to_string(&json).unwrap()).unwrap();
    match ModelArtifact::load(&newer) {
        Err(CliError::VersionMismatch { found, expected, .. }) => {
            assert_eq!(found, FORMAT_VERSION + 1);
            assert_eq!(expected, FORMAT_VERSION);
        }
        other => panic!("expected a version mismatch, got {other:?}"),
    }

    let truncated = dir.join("truncated.json");
    fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert!(matches!(ModelArtifact::load(&truncated), Err(CliError::Parse { .. })));

    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["training"]["ys"][0] = serde_json::json!(123.0);
    let tampered = dir.join("tampered.json");
    fs::write(&tampered, serde_json::to_string(&json).unwrap()).unwrap();
    let loaded = ModelArtifact::load(&tampered).unwrap();
    assert!(matches!(loaded.restore(), Err(CliError::Corrupt(_))));
}

fn rbf(a: f64, b: f64, sv: f64, l: f64) -> f64 {
    sv * (-(a - b) * (a - b) / (2.0 * l)).exp()
}

fn column(table: &Table, name: &str) -> Vec<f64> {
    let c = table.column(name).unwrap();
    table.rows.iter().map(|r| r[c].parse().unwrap()).collect()
}

#[test]
fn first_data_centric_step_matches_a_dense_gp_fit() {
    let dir = scratch("dense");
    run_experiment(&ExperimentConfig::new(ExperimentId::GprData10Step, &dir)).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let kernel = &manifest["details"]["kernel"];
    let sv = kernel["signal_variance"].as_f64().unwrap();
    let l = kernel["length_scale"].as_f64().unwrap();
    let gamma = manifest["details"]["schedule"][0].as_f64().unwrap();

    let data = gen_regression_toy(1, false);
    let n = data.xs.nrows();
    let k = DMatrix::from_fn(n, n, |i, j| rbf(data.xs[(i, 0)], data.xs[(j, 0)], sv, l))
        + DMatrix::identity(n, n) * (gamma + 1e-8);
    let k_inv = k.try_inverse().unwrap();

    let table = Table::read(&dir.join("predictions.csv")).unwrap();
    assert_eq!(table.header, ["method", "step", "x1", "mean", "p2.5", "p97.5"]);
    assert_eq!(table.rows.len(), 10 * 201);
    let xs = column(&table, "x1");
    let steps = column(&table, "step");
    let mean = column(&table, "mean");
    let lo = column(&table, "p2.5");
    let hi = column(&table, "p97.5");
    let mut checked = 0;
    for i in 0..table.rows.len() {
        if steps[i] != 1.0 {
            continue;
        }
        let ks = DVector::from_fn(n, |j, _| rbf(xs[i], data.xs[(j, 0)], sv, l));
        let m = (ks.transpose() * &k_inv * &data.ys)[0];
        let v = sv - (ks.transpose() * &k_inv * &ks)[0];
        let sd = v.max(0.0).sqrt();
        let scale = 1.0 + m.abs();
        assert!((mean[i] - m).abs() < 1e-7 * scale, "mean at {} : {} vs {m}", xs[i], mean[i]);
        assert!((lo[i] - (m - Z_975 * sd)).abs() < 1e-6 * scale);
        assert!((hi[i] - (m + Z_975 * sd)).abs() < 1e-6 * scale);
        assert!((lo[i] + hi[i] - 2.0 * mean[i]).abs() < 1e-9 * scale);
        checked += 1;
    }
    assert_eq!(checked, 201);
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn experiments_are_deterministic_with_expected_schemas() {
    let expected: [(ExperimentId, &str, &[&str], Option<usize>); 4] = [
        (ExperimentId::GprDist10Step, "predictions.csv", &["method", "step", "x1", "mean", "p2.5", "p97.5"], Some(2010)),
        (ExperimentId::GpcDataCb, "error_series.csv", &["variant", "step", "train_log_loss", "truth_mse"], Some(6)),
        (ExperimentId::GpcDist10Step, "error_series.csv", &["step", "mse", "mse_quadrature"], Some(10)),
        (ExperimentId::CbPlots, "cb_optimal.csv", &[], None),
    ];
    for (id, file, header, rows) in expected {
        let a = scratch(&format!("det-a-{}", id.name()));
        let b = scratch(&format!("det-b-{}", id.name()));
        let out = run_experiment(&ExperimentConfig::new(id, &a)).unwrap();
        run_experiment(&ExperimentConfig::new(id, &b)).unwrap();
        assert_eq!(dir_files(&a), dir_files(&b), "{}", id.name());
        assert!(out.files.iter().any(|f| f.ends_with(file)));
        let t = Table::read(&a.join(file)).unwrap();
        if !header.is_empty() {
            assert_eq!(t.header, header);
        }
        if let Some(r) = rows {
            assert_eq!(t.rows.len(), r, "{}", id.name());
        }
        let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["experiment"], id.name());
        assert_eq!(manifest["deterministic"], true);
    }
}

#[test]
fn experiment_ids_parse_and_unknown_ids_fail() {
    for id in ExperimentId::ALL {
        assert_eq!(id.name().parse::<ExperimentId>().unwrap(), id);
    }
    assert!(matches!("nope".parse::<ExperimentId>(), Err(CliError::UnknownExperiment(_))));
}

#[test]
fn unwritable_output_directory_is_an_io_error() {
    let dir = scratch("unwritable");
    let file = dir.join("plain-file");
    fs::write(&file, "x").unwrap();
    let err = run_experiment(&ExperimentConfig::new(ExperimentId::CbPlots, file.join("sub"))).unwrap_err();
    assert!(matches!(err, CliError::Io { .. }));
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn binary_help_and_usage_errors() {
    let help = bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("reproduce"));

    let bad = bin().args(["fit", "--method", "nonsense"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let dir = scratch("bin-unknown");
    let unknown = bin().args(["reproduce", "no-such-experiment", "--out"]).arg(&dir).output().unwrap();
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("no-such-experiment"));
}

#[test]
fn binary_fit_predict_pipeline() {
    let dir = scratch("bin-pipeline");
    let data = dir.join("train.csv");
    let st = bin().args(["gen-data", "--kind", "regression", "--out"]).arg(&data).status().unwrap();
    assert!(st.success());
    let model = dir.join("model.json");
    let st = bin()
        .args(["distill", "--method", "gpr-data", "--schedule", "linspace:0.1:1:4", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&model)
        .status()
        .unwrap();
    assert!(st.success());
    let preds = dir.join("preds.csv");
    let st = bin()
        .args(["predict", "--grid", "0:10:11", "--all-steps", "--model"])
        .arg(&model)
        .arg("--out")
        .arg(&preds)
        .status()
        .unwrap();
    assert!(st.success());
    let t = Table::read(&preds).unwrap();
    assert_eq!(t.rows.len(), 44);
    assert!(t.column("mean").is_some());

    let grid = dir.join("grid.csv");
    let st = bin()
        .args(["grid-search", "--objective", "gpr-nll", "--points", "5", "--noise", "0.1,1", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&grid)
        .status()
        .unwrap();
    assert!(st.success());
    assert_eq!(Table::read(&grid).unwrap().rows.len(), 50);
}

#[test]
fn binary_reports_numerical_failure_with_exit_code_two() {
    let dir = scratch("bin-numerical");
    let data = dir.join("train.csv");
    assert!(bin().args(["gen-data", "--kind", "classification", "--out"]).arg(&data).status().unwrap().success());
    let out = bin()
        .args(["distill", "--method", "gpc-data", "--steps", "3", "--newton-max-iters", "1", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(dir.join("m.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("step"), "{stderr}");
    assert!(!dir.join("m.json").exists());
}

#[test]
fn number_format_is_lossless() {
    for v in [0.1, 1.0 / 3.0, -2.5e-310, 1e308, 123456789.12345679] {
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), f64::to_bits(v));
    }
}
