//! Reproducible experiments on the toy datasets.
//!
//! Every run writes plot-ready CSV files and a `manifest.json` with all
//! resolved settings into its own output directory. Apart from the timing
//! experiment, outputs depend only on the configuration and seed.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gpdistill::continuous_bernoulli::{cb_log_density, cb_normalizer, cb_terms_at_latent};
use gpdistill::gpc_distill::{
    approximation_error, distilled_targets, distribution_centric_gpc_iterated, distribution_centric_gpc_scaled,
    log_loss, TargetKind,
};
use gpdistill::gpr_distill::{effective_noise, linspace};
use gpdistill::hyperopt::{grid_search, GridData, GridResult, GridSpec, Objective};
use gpdistill::kernel::DEFAULT_JITTER;
use gpdistill::numeric::sigmoid;
use gpdistill::{BinaryDataset, Dataset, DistillSchedule, GpcModel, KernelParams, Likelihood, NewtonOptions, PriorMean, ProbabilityMethod};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::bench::{bench_fit_scaling, BenchConfig};
use crate::data::{
    classification_probability, classification_toy_info, fmt_f64, gen_classification_toy, gen_regression_toy,
    grid_1d, read_classification, read_regression, regression_toy_info, write_json, Table,
};
use crate::error::{CliError, CliResult};
use crate::model::{fit_model, FittedModel, ModelSpec, NewtonSettings, PathKind, Prediction};

/// Two-sided 95% standard normal quantile.
pub const Z_975: f64 = 1.959964;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_CLASSIFICATION_SIZE: usize = 30;
pub const DEFAULT_STEPS: usize = 10;
/// Regression test inputs: 201 equidistant points on `[0, 10]`.
pub const REGRESSION_TEST_GRID: (f64, f64, usize) = (0.0, 10.0, 201);
/// Classification test inputs: 90 equidistant points on `[-2, 7]`.
pub const CLASSIFICATION_TEST_GRID: (f64, f64, usize) = (-2.0, 7.0, 90);
/// Noise added to the Gram matrix of the regularized continuous Bernoulli variant.
pub const DEFAULT_CB_REGULARIZATION: f64 = 1.0;
pub const PROBABILITY_METHOD: ProbabilityMethod = ProbabilityMethod::Quadrature;

/// The reproducible experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    GprData10Step,
    GprDist10Step,
    GpcDataCb,
    GpcDataHard,
    GpcDist10Step,
    GridSearch,
    AblationConst,
    AblationDecreasing,
    AblationIncreasing,
    AblationSteepDecreasing,
    CbPlots,
    Timing,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 12] = [
        ExperimentId::GprData10Step,
        ExperimentId::GprDist10Step,
        ExperimentId::GpcDataCb,
        ExperimentId::GpcDataHard,
        ExperimentId::GpcDist10Step,
        ExperimentId::GridSearch,
        ExperimentId::AblationConst,
        ExperimentId::AblationDecreasing,
        ExperimentId::AblationIncreasing,
        ExperimentId::AblationSteepDecreasing,
        ExperimentId::CbPlots,
        ExperimentId::Timing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::GprData10Step => "gpr-data-10step",
            ExperimentId::GprDist10Step => "gpr-dist-10step",
            ExperimentId::GpcDataCb => "gpc-data-cb",
            ExperimentId::GpcDataHard => "gpc-data-hard",
            ExperimentId::GpcDist10Step => "gpc-dist-10step",
            ExperimentId::GridSearch => "grid-search",
            ExperimentId::AblationConst => "ablation-const-0.2",
            ExperimentId::AblationDecreasing => "ablation-1-to-0.1",
            ExperimentId::AblationIncreasing => "ablation-0.1-to-3",
            ExperimentId::AblationSteepDecreasing => "ablation-3-to-0.1",
            ExperimentId::CbPlots => "cb-plots",
            ExperimentId::Timing => "timing",
        }
    }

    /// Whether the outputs depend only on the configuration.
    pub fn is_deterministic(self) -> bool {
        self != ExperimentId::Timing
    }

    /// Default noise schedule of the regression experiments.
    fn default_schedule(self) -> Vec<f64> {
        match self {
            ExperimentId::AblationConst => vec![0.2; DEFAULT_STEPS],
            ExperimentId::AblationDecreasing => linspace(1.0, 0.1, DEFAULT_STEPS),
            ExperimentId::AblationIncreasing => linspace(0.1, 3.0, DEFAULT_STEPS),
            ExperimentId::AblationSteepDecreasing => linspace(3.0, 0.1, DEFAULT_STEPS),
            _ => linspace(0.1, 1.0, DEFAULT_STEPS),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| CliError::UnknownExperiment(s.to_string()))
    }
}

/// Log-spaced hyperparameter grid used for model selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSettings {
    pub low: f64,
    pub high: f64,
    pub n: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            low: 1e-2,
            high: 1e2,
            n: 16,
        }
    }
}

impl GridSettings {
    fn spec(&self, noise: Option<Vec<f64>>) -> CliResult<GridSpec> {
        let mut spec = GridSpec::log_spaced(self.low, self.high, self.n)?;
        spec.noise_values = noise;
        Ok(spec)
    }

    fn manifest(&self) -> Value {
        json!({ "spacing": "log", "low": self.low, "high": self.high, "n": self.n, "axes": ["sigma_f", "length_scale"] })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// CSV file replacing the generated toy dataset.
    pub data: Option<PathBuf>,
    pub grid: GridSettings,
    /// Overrides the regression noise schedule.
    pub schedule: Option<Vec<f64>>,
    /// Number of distillation steps for the classification experiments.
    pub steps: usize,
    pub classification_size: usize,
    pub cb_regularization: f64,
    pub bench: BenchConfig,
}

impl ExperimentConfig {
    pub fn new(id: ExperimentId, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            id,
            seed: DEFAULT_SEED,
            out_dir: out_dir.into(),
            data: None,
            grid: GridSettings::default(),
            schedule: None,
            steps: DEFAULT_STEPS,
            classification_size: DEFAULT_CLASSIFICATION_SIZE,
            cb_regularization: DEFAULT_CB_REGULARIZATION,
            bench: BenchConfig::default(),
        }
    }

    fn schedule(&self) -> Vec<f64> {
        self.schedule.clone().unwrap_or_else(|| self.id.default_schedule())
    }
}

/// Files written by a run, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub manifest: Value,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Writer<'_> {
    fn table(&mut self, name: &str, table: &Table) -> CliResult<()> {
        table.write(&self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

fn newton_manifest(o: &NewtonOptions) -> Value {
    json!({
        "max_iters": o.max_iters,
        "step_tolerance": o.step_tolerance,
        "gradient_tolerance": o.gradient_tolerance,
        "max_halvings": o.max_halvings,
    })
}

fn kernel_manifest(p: &KernelParams) -> Value {
    json!({
        "kernel": "rbf",
        "sigma_f": p.signal_variance.sqrt(),
        "signal_variance": p.signal_variance,
        "length_scale": p.length_scale,
        "jitter": p.jitter,
    })
}

fn grid_manifest(result: &GridResult, spec: &GridSpec) -> Value {
    json!({
        "objective": result.objective,
        "best": {
            "sigma_f": result.best.sigma_f,
            "length_scale": result.best.length_scale,
            "noise": result.best.noise,
            "nll": result.best.nll,
        },
        "best_is_interior": result.best_is_interior(spec),
        "failed_cells": result.cells.iter().filter(|c| !c.nll.is_finite()).count(),
    })
}

fn grid_table() -> Table {
    Table::new(&["objective", "sigma_f", "length_scale", "noise", "nll"])
}

fn objective_name(o: Objective) -> &'static str {
    match o {
        Objective::GprNll => "gpr_nll",
        Objective::GpcBernoulliNll => "gpc_bernoulli_nll",
        Objective::GpcCbNll => "gpc_cb_nll",
    }
}

fn push_grid(table: &mut Table, result: &GridResult) {
    for c in &result.cells {
        let noise = c.noise.unwrap_or(match result.objective {
            Objective::GprNll => DEFAULT_JITTER,
            _ => 0.0,
        });
        table.push(vec![
            objective_name(result.objective).into(),
            fmt_f64(c.sigma_f),
            fmt_f64(c.length_scale),
            fmt_f64(noise),
            fmt_f64(c.nll),
        ]);
    }
}

struct Selection {
    params: KernelParams,
    spec: GridSpec,
    result: GridResult,
}

fn select(data: GridData<'_>, grid: &GridSettings, objective: Objective, noise: Option<f64>) -> CliResult<Selection> {
    let spec = grid.spec(noise.map(|n| vec![n]))?;
    let result = grid_search(data, &spec, objective)?;
    Ok(Selection {
        params: result.best.kernel_params(DEFAULT_JITTER),
        spec,
        result,
    })
}

fn x_header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

/// Header of a predictions table: `prefix..., x1..xd`, then the value columns.
pub fn prediction_header(prefix: &[&str], d: usize, classification: bool) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    h.extend(x_header(d));
    if classification {
        h.push("probability".into());
    } else {
        h.extend(["mean", "p2.5", "p97.5"].map(String::from));
    }
    h
}

/// Appends one row per test input; percentiles are `mean ∓ 1.959964 sd`.
pub fn push_predictions(table: &mut Table, prefix: &[String], xs: &DMatrix<f64>, pred: &Prediction) {
    for i in 0..xs.nrows() {
        let mut row = prefix.to_vec();
        row.extend(xs.row(i).iter().map(|&v| fmt_f64(v)));
        match pred {
            Prediction::Regression { mean, variance } => {
                let half = Z_975 * variance[i].max(0.0).sqrt();
                row.extend([fmt_f64(mean[i]), fmt_f64(mean[i] - half), fmt_f64(mean[i] + half)]);
            }
            Prediction::Classification { probability } => row.push(fmt_f64(probability[i])),
        }
        table.push(row);
    }
}

fn regression_data(config: &ExperimentConfig) -> CliResult<(Dataset, Value)> {
    match &config.data {
        Some(path) => Ok((read_regression(path)?, json!({ "source": "csv", "path": path }))),
        None => Ok((
            gen_regression_toy(config.seed, false),
            serde_json::to_value(regression_toy_info(config.seed, false)).expect("serializable"),
        )),
    }
}

fn classification_data(config: &ExperimentConfig) -> CliResult<(BinaryDataset, Value)> {
    match &config.data {
        Some(path) => Ok((read_classification(path)?, json!({ "source": "csv", "path": path }))),
        None => Ok((
            gen_classification_toy(config.seed, config.classification_size)?,
            serde_json::to_value(classification_toy_info(config.seed, config.classification_size)).expect("serializable"),
        )),
    }
}

fn test_grid_manifest((lo, hi, n): (f64, f64, usize)) -> Value {
    json!({ "kind": "equidistant", "low": lo, "high": hi, "n": n })
}

/// Runs one experiment and writes its outputs into `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> CliResult<ExperimentOutput> {
    if config.data.is_some() && matches!(config.id, ExperimentId::GridSearch | ExperimentId::CbPlots | ExperimentId::Timing) {
        return Err(CliError::Usage(format!("experiment {} does not take a data file", config.id)));
    }
    fs::create_dir_all(&config.out_dir).map_err(CliError::io(&config.out_dir))?;
    let mut w = Writer {
        dir: &config.out_dir,
        files: Vec::new(),
    };
    let details = match config.id {
        ExperimentId::GprData10Step => regression_distillation(config, &mut w, &[RegressionMethod::Data])?,
        ExperimentId::GprDist10Step => regression_distillation(config, &mut w, &[RegressionMethod::Dist])?,
        ExperimentId::AblationConst
        | ExperimentId::AblationDecreasing
        | ExperimentId::AblationIncreasing
        | ExperimentId::AblationSteepDecreasing => {
            regression_distillation(config, &mut w, &[RegressionMethod::Data, RegressionMethod::Dist])?
        }
        ExperimentId::GpcDataCb => classification_data_centric(config, &mut w, TargetKind::SoftMean)?,
        ExperimentId::GpcDataHard => classification_data_centric(config, &mut w, TargetKind::HardThreshold)?,
        ExperimentId::GpcDist10Step => classification_distribution_centric(config, &mut w)?,
        ExperimentId::GridSearch => grid_experiment(config, &mut w)?,
        ExperimentId::CbPlots => cb_plots(&mut w)?,
        ExperimentId::Timing => timing(config, &mut w)?,
    };
    w.files.push("manifest.json".into());
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": config.id.name(),
        "seed": config.seed,
        "deterministic": config.id.is_deterministic(),
        "files": w.files,
        "details": details,
    });
    write_json(&config.out_dir.join("manifest.json"), &manifest)?;
    Ok(ExperimentOutput {
        out_dir: config.out_dir.clone(),
        files: w.files,
        manifest,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RegressionMethod {
    Data,
    Dist,
}

fn regression_distillation(config: &ExperimentConfig, w: &mut Writer<'_>, methods: &[RegressionMethod]) -> CliResult<Value> {
    let (data, source) = regression_data(config)?;
    let schedule = config.schedule();
    let steps = schedule.len();
    // hyperparameters are chosen for an ordinary fit with the first noise value
    let selection = select(GridData::Regression(&data), &config.grid, Objective::GprNll, Some(schedule[0]))?;
    let mut grid = grid_table();
    push_grid(&mut grid, &selection.result);
    w.table("grid.csv", &grid)?;

    let (lo, hi, n) = REGRESSION_TEST_GRID;
    let test_xs = grid_1d(lo, hi, n);
    let mut predictions = Table::new(&prediction_header(&["method", "step"], 1, false));
    let mut targets = Table::new(&["step", "x1", "target"]);
    for &method in methods {
        let (name, spec) = match method {
            RegressionMethod::Data => (
                "gpr-data",
                ModelSpec::GprData {
                    schedule: schedule.clone(),
                    path: PathKind::Spectral,
                },
            ),
            RegressionMethod::Dist => ("gpr-dist", ModelSpec::GprDist { schedule: schedule.clone() }),
        };
        let model = fit_model(&spec, &selection.params, NewtonSettings::default(), &data.xs, &data.ys)?;
        for t in 1..=steps {
            let pred = model.predict(&test_xs, t, PROBABILITY_METHOD)?;
            push_predictions(&mut predictions, &[name.into(), t.to_string()], &test_xs, &pred);
        }
        if let FittedModel::GprData(m) = &model {
            for t in 0..=steps {
                let y = m.targets(t)?;
                for i in 0..data.len() {
                    targets.push(vec![t.to_string(), fmt_f64(data.xs[(i, 0)]), fmt_f64(y[i])]);
                }
            }
        }
    }
    w.table("predictions.csv", &predictions)?;
    if methods.contains(&RegressionMethod::Data) {
        w.table("targets.csv", &targets)?;
    }

    let sched = DistillSchedule::new(schedule.clone())?;
    let mut noise = Table::new(&["step", "gamma", "gamma_minus", "effective_noise"]);
    for t in 1..=steps {
        let e = effective_noise(&sched, t)?;
        noise.push(vec![t.to_string(), fmt_f64(schedule[t - 1]), fmt_f64(e.gamma_minus), fmt_f64(e.effective)]);
    }
    w.table("effective_noise.csv", &noise)?;

    Ok(json!({
        "data": source,
        "methods": methods.iter().map(|m| match m { RegressionMethod::Data => "gpr-data", RegressionMethod::Dist => "gpr-dist" }).collect::<Vec<_>>(),
        "data_centric_path": "spectral",
        "schedule": schedule,
        "steps": steps,
        "hyperparameter_selection": {
            "grid": config.grid.manifest(),
            "noise": schedule[0],
            "result": grid_manifest(&selection.result, &selection.spec),
        },
        "kernel": kernel_manifest(&selection.params),
        "test_inputs": test_grid_manifest(REGRESSION_TEST_GRID),
        "interval": { "lower_quantile": 0.025, "upper_quantile": 0.975, "z": Z_975, "of": "latent function" },
    }))
}

fn classification_data_centric(config: &ExperimentConfig, w: &mut Writer<'_>, kind: TargetKind) -> CliResult<Value> {
    let (data, source) = classification_data(config)?;
    let selection = select(GridData::Classification(&data), &config.grid, Objective::GpcBernoulliNll, None)?;
    let mut grid = grid_table();
    push_grid(&mut grid, &selection.result);
    w.table("grid.csv", &grid)?;

    let variants: Vec<(&str, Likelihood, Option<Vec<f64>>)> = match kind {
        TargetKind::HardThreshold => vec![("bernoulli", Likelihood::Bernoulli, None), ("cb", Likelihood::ContinuousBernoulli, None)],
        _ => vec![
            ("bernoulli", Likelihood::Bernoulli, None),
            ("cb", Likelihood::ContinuousBernoulli, None),
            (
                "cb-regularized",
                Likelihood::ContinuousBernoulli,
                Some(vec![0.0, config.cb_regularization]),
            ),
        ],
    };
    let (lo, hi, n) = CLASSIFICATION_TEST_GRID;
    let test_xs = grid_1d(lo, hi, n);
    let truth = test_xs.column(0).map(classification_probability);
    let mut predictions = Table::new(&prediction_header(&["variant", "step"], 1, true));
    let mut series = Table::new(&["variant", "step", "train_log_loss", "truth_mse"]);
    let mut variant_manifest = Vec::new();
    for (name, likelihood, reg_gammas) in &variants {
        let spec = ModelSpec::GpcData {
            steps: 2,
            target_kind: kind,
            distilled_likelihood: *likelihood,
            reg_gammas: reg_gammas.clone(),
        };
        let model = fit_model(&spec, &selection.params, NewtonSettings::default(), &data.xs, &data.ys)?;
        let FittedModel::GpcData(models) = &model else { unreachable!("data-centric spec") };
        for (i, m) in models.iter().enumerate() {
            let step = i + 1;
            let pred = model.predict(&test_xs, step, PROBABILITY_METHOD)?;
            push_predictions(&mut predictions, &[name.to_string(), step.to_string()], &test_xs, &pred);
            let Prediction::Classification { probability } = &pred else { unreachable!() };
            let train = m.predict_proba(&data.xs, PROBABILITY_METHOD)?;
            series.push(vec![
                name.to_string(),
                step.to_string(),
                fmt_f64(log_loss(&train, &data.ys)),
                fmt_f64((probability - &truth).norm_squared() / n as f64),
            ]);
        }
        variant_manifest.push(json!({
            "name": name,
            "steps": 2,
            "first_likelihood": Likelihood::Bernoulli,
            "distilled_likelihood": likelihood,
            "reg_gammas": reg_gammas.clone().unwrap_or_else(|| vec![0.0, 0.0]),
        }));
    }
    w.table("predictions.csv", &predictions)?;
    w.table("error_series.csv", &series)?;
    Ok(json!({
        "data": source,
        "target_kind": kind,
        "variants": variant_manifest,
        "hyperparameter_selection": {
            "grid": config.grid.manifest(),
            "result": grid_manifest(&selection.result, &selection.spec),
        },
        "kernel": kernel_manifest(&selection.params),
        "newton": newton_manifest(&NewtonOptions::default()),
        "probability": PROBABILITY_METHOD,
        "test_inputs": test_grid_manifest(CLASSIFICATION_TEST_GRID),
    }))
}

fn classification_distribution_centric(config: &ExperimentConfig, w: &mut Writer<'_>) -> CliResult<Value> {
    let (data, source) = classification_data(config)?;
    let selection = select(GridData::Classification(&data), &config.grid, Objective::GpcBernoulliNll, None)?;
    let mut grid = grid_table();
    push_grid(&mut grid, &selection.result);
    w.table("grid.csv", &grid)?;

    let newton = NewtonOptions::default();
    let steps = config.steps;
    let iterated = distribution_centric_gpc_iterated(&data, &selection.params, steps, &newton)?;
    let scaled = (1..=steps)
        .map(|t| distribution_centric_gpc_scaled(&data, &selection.params, t, &newton))
        .collect::<gpdistill::Result<Vec<GpcModel>>>()?;
    // the scaled prior reproduces the mode of the replicated-data posterior but
    // inflates its covariance t-fold, so the two are compared through σ(μ*)
    let method = ProbabilityMethod::LatentMean;
    let (lo, hi, n) = CLASSIFICATION_TEST_GRID;
    let test_xs = grid_1d(lo, hi, n);
    let mut predictions = Table::new(&prediction_header(&["variant", "step"], 1, true));
    for t in 1..=steps {
        let it = Prediction::Classification {
            probability: iterated.predict_proba(&test_xs, t, method)?,
        };
        push_predictions(&mut predictions, &["iterated".into(), t.to_string()], &test_xs, &it);
        let sc = Prediction::Classification {
            probability: scaled[t - 1].predict_proba(&test_xs, method)?,
        };
        push_predictions(&mut predictions, &["scaled".into(), t.to_string()], &test_xs, &sc);
    }
    w.table("predictions.csv", &predictions)?;
    let errors = approximation_error(&iterated, &scaled, &test_xs, method)?;
    let errors_quadrature = approximation_error(&iterated, &scaled, &test_xs, ProbabilityMethod::Quadrature)?;
    let mut series = Table::new(&["step", "mse", "mse_quadrature"]);
    for (i, (e, q)) in errors.iter().zip(&errors_quadrature).enumerate() {
        series.push(vec![(i + 1).to_string(), fmt_f64(*e), fmt_f64(*q)]);
    }
    w.table("error_series.csv", &series)?;
    Ok(json!({
        "data": source,
        "steps": steps,
        "w_estimation": "re-estimated at every step's mode",
        "hyperparameter_selection": {
            "grid": config.grid.manifest(),
            "result": grid_manifest(&selection.result, &selection.spec),
        },
        "kernel": kernel_manifest(&selection.params),
        "newton": newton_manifest(&newton),
        "probability": method,
        "test_inputs": test_grid_manifest(CLASSIFICATION_TEST_GRID),
        "error_metric": "mean squared difference of predicted probabilities; mse uses sigmoid(latent mean), mse_quadrature the expected sigmoid",
    }))
}

fn grid_experiment(config: &ExperimentConfig, w: &mut Writer<'_>) -> CliResult<Value> {
    let regression_noise = config.schedule()[0];
    let mut grid = grid_table();

    let (reg, reg_source) = regression_data(config)?;
    let reg_sel = select(GridData::Regression(&reg), &config.grid, Objective::GprNll, Some(regression_noise))?;
    push_grid(&mut grid, &reg_sel.result);

    let (cls, cls_source) = classification_data(config)?;
    let ber_sel = select(GridData::Classification(&cls), &config.grid, Objective::GpcBernoulliNll, None)?;
    push_grid(&mut grid, &ber_sel.result);

    // the continuous Bernoulli grid is searched on the soft targets of the selected ordinary classifier
    let first = GpcModel::fit(&cls, &ber_sel.params, Likelihood::Bernoulli, 0.0, PriorMean::zero(), &NewtonOptions::default())?;
    let soft = cls.with_targets(distilled_targets(&first, TargetKind::SoftMean)?)?;
    let cb_sel = select(GridData::Classification(&soft), &config.grid, Objective::GpcCbNll, None)?;
    push_grid(&mut grid, &cb_sel.result);
    w.table("grid.csv", &grid)?;

    Ok(json!({
        "grid": config.grid.manifest(),
        "gpr_nll": { "data": reg_source, "noise": regression_noise, "result": grid_manifest(&reg_sel.result, &reg_sel.spec) },
        "gpc_bernoulli_nll": { "data": cls_source, "result": grid_manifest(&ber_sel.result, &ber_sel.spec) },
        "gpc_cb_nll": {
            "data": "soft-mean targets of the selected Bernoulli classifier",
            "result": grid_manifest(&cb_sel.result, &cb_sel.spec),
        },
        "failed_cell_value": "inf",
        "tie_break": ["nll", "sigma_f", "length_scale", "noise"],
    }))
}

/// Parameter `λ = σ(a)` maximizing the continuous Bernoulli density of `x`.
///
/// The maximizer matches the distribution mean `σ(a) - d/da log C(σ(a))` to `x`,
/// which is increasing in `a`, so bisection applies.
pub fn cb_optimal_lambda(x: f64) -> f64 {
    let mean = |a: f64| sigmoid(a) - cb_terms_at_latent(a).dlog_c;
    let (mut lo, mut hi) = (-700.0_f64, 700.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    sigmoid(0.5 * (lo + hi))
}

fn cb_plots(w: &mut Writer<'_>) -> CliResult<Value> {
    let lambdas: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
    let xs = linspace(0.0, 1.0, 101);
    let mut density = Table::new(&["lambda", "x", "bernoulli", "continuous_bernoulli"]);
    let mut nll = Table::new(&["x", "lambda", "bernoulli_nll", "cb_nll"]);
    for &l in &lambdas {
        for &x in &xs {
            let ber = x * l.ln() + (1.0 - x) * (-l).ln_1p();
            density.push(vec![fmt_f64(l), fmt_f64(x), fmt_f64(ber.exp()), fmt_f64(cb_log_density(x, l)?.exp())]);
        }
    }
    let lambda_grid = linspace(0.005, 0.995, 199);
    for &x in &lambdas {
        for &l in &lambda_grid {
            let ber = x * l.ln() + (1.0 - x) * (-l).ln_1p();
            nll.push(vec![fmt_f64(x), fmt_f64(l), fmt_f64(-ber), fmt_f64(-cb_log_density(x, l)?)]);
        }
    }
    let mut constant = Table::new(&["a", "lambda", "normalizer", "log_c", "dlog_c", "d2log_c"]);
    for &a in &linspace(-10.0, 10.0, 401) {
        let terms = cb_terms_at_latent(a);
        let lambda = sigmoid(a);
        constant.push(vec![
            fmt_f64(a),
            fmt_f64(lambda),
            fmt_f64(cb_normalizer(lambda)?),
            fmt_f64(terms.log_c),
            fmt_f64(terms.dlog_c),
            fmt_f64(terms.d2log_c),
        ]);
    }
    let mut optimal = Table::new(&["x", "bernoulli_lambda", "cb_lambda"]);
    for &x in &linspace(0.01, 0.99, 99) {
        optimal.push(vec![fmt_f64(x), fmt_f64(x), fmt_f64(cb_optimal_lambda(x))]);
    }
    w.table("cb_density.csv", &density)?;
    w.table("cb_nll.csv", &nll)?;
    w.table("cb_constant.csv", &constant)?;
    w.table("cb_optimal.csv", &optimal)?;
    Ok(json!({
        "lambdas": lambdas,
        "x_grid": { "low": 0.0, "high": 1.0, "n": 101 },
        "lambda_grid": { "low": 0.005, "high": 0.995, "n": 199 },
        "latent_grid": { "low": -10.0, "high": 10.0, "n": 401 },
        "optimal_x_grid": { "low": 0.01, "high": 0.99, "n": 99 },
    }))
}

fn timing(config: &ExperimentConfig, w: &mut Writer<'_>) -> CliResult<Value> {
    let bench = BenchConfig {
        seed: config.seed,
        ..config.bench.clone()
    };
    let report = bench_fit_scaling(&bench)?;
    w.table("timing.csv", &report.summary_table())?;
    w.table("timing_raw.csv", &report.raw_table())?;
    Ok(json!({
        "bench": bench.manifest(),
        "slopes": report.slopes(),
    }))
}
