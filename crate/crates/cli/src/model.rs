//! Fitting, prediction and persistence for every model family the tool supports.

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use gpdistill::gpc_distill::{
    data_centric_gpc, distribution_centric_gpc_iterated, distribution_centric_gpc_scaled, GpcDistillConfig,
    IteratedGpc, TargetKind,
};
use gpdistill::gpr::fit_gpr;
use gpdistill::gpr_distill::distribution_centric_closed_form;
use gpdistill::{
    BinaryDataset, DataCentricGpr, DataCentricPath, Dataset, DistillSchedule, GpcModel, GprModel, KernelParams,
    Likelihood, NewtonOptions, PriorMean, ProbabilityMethod,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::write_json;
use crate::error::{CliError, CliResult};

/// Current model artifact format.
pub const FORMAT_VERSION: u32 = 1;

/// Model family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gpr,
    GprData,
    GprDist,
    Gpc,
    GpcData,
    GpcDist,
}

impl Method {
    pub fn is_classification(self) -> bool {
        matches!(self, Method::Gpc | Method::GpcData | Method::GpcDist)
    }

    pub fn is_distillation(self) -> bool {
        !matches!(self, Method::Gpr | Method::Gpc)
    }
}

/// Data-centric regression evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    Naive,
    Spectral,
}

impl From<PathKind> for DataCentricPath {
    fn from(p: PathKind) -> Self {
        match p {
            PathKind::Naive => DataCentricPath::Naive,
            PathKind::Spectral => DataCentricPath::Spectral,
        }
    }
}

/// Everything besides the kernel needed to refit a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum ModelSpec {
    Gpr {
        noise: f64,
    },
    GprData {
        schedule: Vec<f64>,
        path: PathKind,
    },
    GprDist {
        schedule: Vec<f64>,
    },
    Gpc {
        likelihood: Likelihood,
        reg_gamma: f64,
    },
    GpcData {
        steps: usize,
        target_kind: TargetKind,
        distilled_likelihood: Likelihood,
        reg_gammas: Option<Vec<f64>>,
    },
    GpcDist {
        steps: usize,
        /// One fit under the `t·k` prior per step instead of iterating.
        scaled: bool,
    },
}

impl ModelSpec {
    pub fn method(&self) -> Method {
        match self {
            ModelSpec::Gpr { .. } => Method::Gpr,
            ModelSpec::GprData { .. } => Method::GprData,
            ModelSpec::GprDist { .. } => Method::GprDist,
            ModelSpec::Gpc { .. } => Method::Gpc,
            ModelSpec::GpcData { .. } => Method::GpcData,
            ModelSpec::GpcDist { .. } => Method::GpcDist,
        }
    }
}

/// Newton–Raphson settings of the Laplace fits, stored with every artifact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonSettings {
    pub max_iters: usize,
    pub step_tolerance: f64,
    pub gradient_tolerance: f64,
    pub max_halvings: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        let o = NewtonOptions::default();
        Self {
            max_iters: o.max_iters,
            step_tolerance: o.step_tolerance,
            gradient_tolerance: o.gradient_tolerance,
            max_halvings: o.max_halvings,
        }
    }
}

impl From<NewtonSettings> for NewtonOptions {
    fn from(s: NewtonSettings) -> Self {
        NewtonOptions {
            max_iters: s.max_iters,
            step_tolerance: s.step_tolerance,
            gradient_tolerance: s.gradient_tolerance,
            max_halvings: s.max_halvings,
        }
    }
}

/// Predictions at a set of test inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Regression { mean: DVector<f64>, variance: DVector<f64> },
    Classification { probability: DVector<f64> },
}

/// A fitted model of any supported family.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Gpr(GprModel),
    GprData(DataCentricGpr),
    GprDist {
        data: Dataset,
        params: KernelParams,
        schedule: DistillSchedule,
    },
    Gpc(GpcModel),
    GpcData(Vec<GpcModel>),
    GpcDistIterated(IteratedGpc),
    /// `models[t-1]` is the fit under the `t·k` prior.
    GpcDistScaled(Vec<GpcModel>),
}

fn regression_data(xs: &DMatrix<f64>, ys: &DVector<f64>) -> CliResult<Dataset> {
    Ok(Dataset::new(xs.clone(), ys.clone())?)
}

fn classification_data(xs: &DMatrix<f64>, ys: &DVector<f64>) -> CliResult<BinaryDataset> {
    Ok(BinaryDataset::new(xs.clone(), ys.clone())?)
}

/// Fits `spec` to the samples `(xs, ys)`.
pub fn fit_model(
    spec: &ModelSpec,
    params: &KernelParams,
    newton: NewtonSettings,
    xs: &DMatrix<f64>,
    ys: &DVector<f64>,
) -> CliResult<FittedModel> {
    params.validate()?;
    let newton = NewtonOptions::from(newton);
    let model = match spec {
        ModelSpec::Gpr { noise } => FittedModel::Gpr(fit_gpr(&regression_data(xs, ys)?, params, *noise, PriorMean::zero())?),
        ModelSpec::GprData { schedule, path } => {
            let schedule = DistillSchedule::new(schedule.clone())?;
            FittedModel::GprData(DataCentricGpr::fit(&regression_data(xs, ys)?, params, &schedule, (*path).into())?)
        }
        ModelSpec::GprDist { schedule } => FittedModel::GprDist {
            data: regression_data(xs, ys)?,
            params: *params,
            schedule: DistillSchedule::new(schedule.clone())?,
        },
        ModelSpec::Gpc { likelihood, reg_gamma } => FittedModel::Gpc(GpcModel::fit(
            &classification_data(xs, ys)?,
            params,
            *likelihood,
            *reg_gamma,
            PriorMean::zero(),
            &newton,
        )?),
        ModelSpec::GpcData {
            steps,
            target_kind,
            distilled_likelihood,
            reg_gammas,
        } => {
            let config = GpcDistillConfig {
                steps: *steps,
                target_kind: *target_kind,
                reg_gammas: reg_gammas.clone(),
                distilled_likelihood: *distilled_likelihood,
                scaled_approximation: false,
                newton,
            };
            FittedModel::GpcData(data_centric_gpc(&classification_data(xs, ys)?, params, &config)?)
        }
        ModelSpec::GpcDist { steps, scaled: false } => {
            FittedModel::GpcDistIterated(distribution_centric_gpc_iterated(&classification_data(xs, ys)?, params, *steps, &newton)?)
        }
        ModelSpec::GpcDist { steps, scaled: true } => {
            let data = classification_data(xs, ys)?;
            if *steps == 0 {
                return Err(CliError::Usage("at least one step is required".into()));
            }
            let models = (1..=*steps)
                .map(|t| distribution_centric_gpc_scaled(&data, params, t, &newton))
                .collect::<gpdistill::Result<Vec<_>>>()?;
            FittedModel::GpcDistScaled(models)
        }
    };
    Ok(model)
}

impl FittedModel {
    /// Number of fitted steps; 1 for ordinary models.
    pub fn steps(&self) -> usize {
        match self {
            FittedModel::Gpr(_) | FittedModel::Gpc(_) => 1,
            FittedModel::GprData(m) => m.steps(),
            FittedModel::GprDist { schedule, .. } => schedule.len(),
            FittedModel::GpcData(ms) | FittedModel::GpcDistScaled(ms) => ms.len(),
            FittedModel::GpcDistIterated(m) => m.steps(),
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(
            self,
            FittedModel::Gpc(_) | FittedModel::GpcData(_) | FittedModel::GpcDistIterated(_) | FittedModel::GpcDistScaled(_)
        )
    }

    /// Predictions of step `step` (1-based) at the rows of `test_xs`.
    pub fn predict(&self, test_xs: &DMatrix<f64>, step: usize, method: ProbabilityMethod) -> CliResult<Prediction> {
        if step == 0 || step > self.steps() {
            return Err(CliError::Usage(format!("step {step} is outside 1..={}", self.steps())));
        }
        let regression = |(mean, cov): (DVector<f64>, DMatrix<f64>)| Prediction::Regression {
            mean,
            variance: cov.diagonal(),
        };
        let classification = |probability| Prediction::Classification { probability };
        Ok(match self {
            FittedModel::Gpr(m) => regression(m.predict(test_xs)?),
            FittedModel::GprData(m) => regression(m.predict(step, test_xs)?),
            FittedModel::GprDist { data, params, schedule } => {
                regression(distribution_centric_closed_form(data, params, schedule, step, test_xs)?)
            }
            FittedModel::Gpc(m) => classification(m.predict_proba(test_xs, method)?),
            FittedModel::GpcData(ms) | FittedModel::GpcDistScaled(ms) => classification(ms[step - 1].predict_proba(test_xs, method)?),
            FittedModel::GpcDistIterated(m) => classification(m.predict_proba(test_xs, step, method)?),
        })
    }

    /// The fitted vectors that identify this model: weights for ordinary
    /// regression, targets per step for data-centric regression and latent
    /// modes per step for classification.
    pub fn fitted_vectors(&self) -> CliResult<Vec<Vec<f64>>> {
        let v = |d: &DVector<f64>| d.as_slice().to_vec();
        Ok(match self {
            FittedModel::Gpr(m) => vec![v(&m.alpha_weights)],
            FittedModel::GprData(m) => (1..=m.steps()).map(|t| m.targets(t).map(|y| v(&y))).collect::<gpdistill::Result<_>>()?,
            FittedModel::GprDist { data, params, schedule } => (1..=schedule.len())
                .map(|t| gpdistill::gpr_distill::distribution_centric_model(data, params, schedule, t).map(|m| v(&m.alpha_weights)))
                .collect::<gpdistill::Result<_>>()?,
            FittedModel::Gpc(m) => vec![v(&m.fit.f_hat)],
            FittedModel::GpcData(ms) | FittedModel::GpcDistScaled(ms) => ms.iter().map(|m| v(&m.fit.f_hat)).collect(),
            FittedModel::GpcDistIterated(m) => (1..=m.steps()).map(|t| v(&m.fit(t).expect("step in range").f_hat)).collect(),
        })
    }
}

/// Training samples stored alongside a model, with a note on their origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub source: String,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl TrainingData {
    pub fn new(source: impl Into<String>, xs: &DMatrix<f64>, ys: &DVector<f64>) -> Self {
        Self {
            source: source.into(),
            xs: (0..xs.nrows()).map(|i| xs.row(i).iter().copied().collect()).collect(),
            ys: ys.as_slice().to_vec(),
        }
    }

    pub fn matrices(&self) -> CliResult<(DMatrix<f64>, DVector<f64>)> {
        let xs = gpdistill::kernel::points_from_rows(&self.xs)?;
        if self.ys.len() != xs.nrows() {
            return Err(CliError::Model(gpdistill::Error::DimensionMismatch {
                expected: xs.nrows(),
                found: self.ys.len(),
            }));
        }
        Ok((xs, DVector::from_vec(self.ys.clone())))
    }
}

/// A persisted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub model: ModelSpec,
    pub kernel: KernelParams,
    pub newton: NewtonSettings,
    pub training: TrainingData,
    pub fitted: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelArtifact {
    pub fn new(
        spec: ModelSpec,
        kernel: KernelParams,
        newton: NewtonSettings,
        training: TrainingData,
        model: &FittedModel,
    ) -> CliResult<Self> {
        Ok(Self {
            format_version: FORMAT_VERSION,
            model: spec,
            kernel,
            newton,
            training,
            fitted: model.fitted_vectors()?,
        })
    }

    /// Fits `spec` and packages the result.
    pub fn fit(
        spec: ModelSpec,
        kernel: KernelParams,
        newton: NewtonSettings,
        training: TrainingData,
    ) -> CliResult<(Self, FittedModel)> {
        let (xs, ys) = training.matrices()?;
        let model = fit_model(&spec, &kernel, newton, &xs, &ys)?;
        Ok((Self::new(spec, kernel, newton, training, &model)?, model))
    }

    pub fn method(&self) -> Method {
        self.model.method()
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }

    /// Reads an artifact, rejecting other format versions.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let probe: VersionProbe = serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))?;
        if probe.format_version != FORMAT_VERSION {
            return Err(CliError::VersionMismatch {
                path: path.to_path_buf(),
                found: probe.format_version,
                expected: FORMAT_VERSION,
            });
        }
        serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
    }

    /// Refits the stored model and checks that it reproduces the stored
    /// fitted vectors bit for bit.
    pub fn restore(&self) -> CliResult<FittedModel> {
        let (xs, ys) = self.training.matrices()?;
        let model = fit_model(&self.model, &self.kernel, self.newton, &xs, &ys)?;
        let refit = model.fitted_vectors()?;
        let same = refit.len() == self.fitted.len()
            && refit
                .iter()
                .zip(&self.fitted)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        if !same {
            return Err(CliError::Corrupt(
                "stored fitted vectors do not match the model refitted from the stored data".into(),
            ));
        }
        Ok(model)
    }
}
