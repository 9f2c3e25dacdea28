//! Self-distillation for GP regression.
//!
//! *Data-centric*: step `t` refits an ordinary zero-mean GPR (noise `γ_t`) to the
//! posterior mean of step `t-1` at the training inputs. The targets collapse to
//! `y_t = ∏_s K(K + γ_s I)⁻¹ y`, which the spectral path evaluates with one
//! eigendecomposition and a diagonal product per step.
//!
//! *Distribution-centric*: step `t` uses the posterior GP of step `t-1` as its
//! prior. After `t` steps with noises `γ_0..γ_{t-1}` this equals one ordinary
//! fit with noise `1 / Σ_s 1/γ_s`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::chain::{CovFactor, PosteriorChain};
use crate::error::{Error, Result};
use crate::gpr::{fit_gpr, symmetric_clamped, Dataset, GprModel, PriorMean};
use crate::kernel::{cross_covariance, gram, spectral_decompose, KernelParams, SpectralDecomp};

/// Default limit on the size of a replicated-data system.
pub const DEFAULT_REPLICATION_CAP: usize = 2000;

/// Noise parameters for successive distillation steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSchedule {
    gammas: Vec<f64>,
    mix_alpha: Option<f64>,
}

impl DistillSchedule {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::InvalidParameter("schedule needs at least one step".into()));
        }
        if let Some(g) = gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidParameter(format!("noise parameters must be positive, got {g}")));
        }
        Ok(Self { gammas, mix_alpha: None })
    }

    /// `steps` copies of the same noise.
    pub fn constant(gamma: f64, steps: usize) -> Result<Self> {
        Self::new(vec![gamma; steps])
    }

    /// `steps` equidistant values from `first` to `last`, both included.
    pub fn linspace(first: f64, last: f64, steps: usize) -> Result<Self> {
        Self::new(linspace(first, last, steps))
    }

    /// Mixes `alpha · y` into each data-centric refit.
    pub fn with_mix_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("mixing weight must lie in (0, 1), got {alpha}")));
        }
        self.mix_alpha = Some(alpha);
        Ok(self)
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn mix_alpha(&self) -> Option<f64> {
        self.mix_alpha
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    fn prefix(&self, steps: usize) -> Result<&[f64]> {
        self.gammas.get(..steps).ok_or(Error::ScheduleTooShort {
            requested: steps,
            available: self.gammas.len(),
        })
    }
}

pub fn linspace(first: f64, last: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![first],
        _ => (0..n)
            .map(|i| {
                if i + 1 == n {
                    last
                } else {
                    first + (last - first) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// Running precision sum of the distribution-centric chain and its reciprocal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveNoise {
    /// `Σ_{s<t} 1/γ_s`
    pub gamma_minus: f64,
    /// `1 / gamma_minus`, the noise of the equivalent single fit.
    pub effective: f64,
}

/// Effective noise after `t ≥ 1` distribution-centric steps.
pub fn effective_noise(schedule: &DistillSchedule, t: usize) -> Result<EffectiveNoise> {
    if t == 0 {
        return Err(Error::InvalidParameter(
            "effective noise is undefined before the first step".into(),
        ));
    }
    let gamma_minus: f64 = schedule.prefix(t)?.iter().map(|g| 1.0 / g).sum();
    Ok(EffectiveNoise {
        gamma_minus,
        effective: 1.0 / gamma_minus,
    })
}

fn shifted_cholesky(k: &DMatrix<f64>, shift: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    Cholesky::new(k + DMatrix::identity(n, n) * shift).ok_or(Error::Singular)
}

/// Data-centric targets `y_1..y_T`, computed by refitting at every step.
///
/// With a mixing weight `α`, step `t` is fitted to `α y + (1-α) y_{t-1}`.
pub fn data_centric_targets_naive(
    data: &Dataset,
    params: &KernelParams,
    schedule: &DistillSchedule,
) -> Result<Vec<DVector<f64>>> {
    let k = gram(&data.xs, params, false)?.values;
    let (_, outputs) = naive_iterations(&k, &data.ys, schedule)?;
    Ok(outputs)
}

/// Returns the training targets each step was fitted to and its posterior means.
fn naive_iterations(
    k: &DMatrix<f64>,
    y: &DVector<f64>,
    schedule: &DistillSchedule,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let mut fit_targets = Vec::with_capacity(schedule.len());
    let mut outputs: Vec<DVector<f64>> = Vec::with_capacity(schedule.len());
    for (s, &gamma) in schedule.gammas().iter().enumerate() {
        let previous = outputs.last().unwrap_or(y);
        let target = match schedule.mix_alpha() {
            Some(alpha) if s > 0 => y * alpha + previous * (1.0 - alpha),
            _ => previous.clone(),
        };
        let chol = shifted_cholesky(k, gamma).map_err(Error::at_step(s + 1))?;
        let output = k * chol.solve(&target);
        fit_targets.push(target);
        outputs.push(output);
    }
    Ok((fit_targets, outputs))
}

/// Diagonal factors `∏_{s ≤ steps} λ_i / (λ_i + γ_s)`.
fn shrinkage_factors(decomp: &SpectralDecomp, gammas: &[f64]) -> DVector<f64> {
    let mut factors = DVector::from_element(decomp.dim(), 1.0);
    for &gamma in gammas {
        for (f, &l) in factors.iter_mut().zip(decomp.eigenvalues().iter()) {
            *f *= l / (l + gamma);
        }
    }
    factors
}

fn reject_mixing(schedule: &DistillSchedule) -> Result<()> {
    if schedule.mix_alpha().is_some() {
        return Err(Error::InvalidParameter(
            "the spectral path does not support mixing with the original targets".into(),
        ));
    }
    Ok(())
}

/// `y_steps = O (∏ A_s) Oᵀ y` from the decomposition of the noiseless Gram matrix.
///
/// `steps = 0` returns `y` unchanged.
pub fn data_centric_targets_fast(
    decomp: &SpectralDecomp,
    y: &DVector<f64>,
    schedule: &DistillSchedule,
    steps: usize,
) -> Result<DVector<f64>> {
    reject_mixing(schedule)?;
    if y.len() != decomp.dim() {
        return Err(Error::DimensionMismatch {
            expected: decomp.dim(),
            found: y.len(),
        });
    }
    let gammas = schedule.prefix(steps)?;
    if steps == 0 {
        return Ok(y.clone());
    }
    Ok(decomp.apply_diagonal(&shrinkage_factors(decomp, gammas), y))
}

/// How the data-centric chain is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataCentricPath {
    /// One Cholesky solve per step.
    Naive,
    /// One eigendecomposition, then diagonal updates.
    Spectral,
}

/// A fitted data-centric distillation chain.
#[derive(Debug, Clone)]
pub struct DataCentricGpr {
    train_xs: DMatrix<f64>,
    params: KernelParams,
    schedule: DistillSchedule,
    path: DataCentricPath,
    gram: DMatrix<f64>,
    decomp: Option<SpectralDecomp>,
    y: DVector<f64>,
    fit_targets: Vec<DVector<f64>>,
    outputs: Vec<DVector<f64>>,
}

impl DataCentricGpr {
    pub fn fit(
        data: &Dataset,
        params: &KernelParams,
        schedule: &DistillSchedule,
        path: DataCentricPath,
    ) -> Result<Self> {
        let k = gram(&data.xs, params, false)?;
        let (decomp, fit_targets, outputs) = match path {
            DataCentricPath::Naive => {
                let (t, o) = naive_iterations(&k.values, &data.ys, schedule)?;
                (None, t, o)
            }
            DataCentricPath::Spectral => {
                reject_mixing(schedule)?;
                let decomp = spectral_decompose(&k)?;
                for &g in schedule.gammas() {
                    decomp.check_shift(g)?;
                }
                (Some(decomp), Vec::new(), Vec::new())
            }
        };
        Ok(Self {
            train_xs: data.xs.clone(),
            params: *params,
            schedule: schedule.clone(),
            path,
            gram: k.values,
            decomp,
            y: data.ys.clone(),
            fit_targets,
            outputs,
        })
    }

    pub fn steps(&self) -> usize {
        self.schedule.len()
    }

    pub fn path(&self) -> DataCentricPath {
        self.path
    }

    pub fn schedule(&self) -> &DistillSchedule {
        &self.schedule
    }

    fn check_step(&self, t: usize, allow_zero: bool) -> Result<()> {
        if t == 0 && !allow_zero {
            return Err(Error::InvalidParameter("step index starts at 1".into()));
        }
        if t > self.steps() {
            return Err(Error::ScheduleTooShort {
                requested: t,
                available: self.steps(),
            });
        }
        Ok(())
    }

    /// `y_t` at the training inputs; `t = 0` gives the observed targets.
    pub fn targets(&self, t: usize) -> Result<DVector<f64>> {
        self.check_step(t, true)?;
        if t == 0 {
            return Ok(self.y.clone());
        }
        match &self.decomp {
            None => Ok(self.outputs[t - 1].clone()),
            Some(d) => data_centric_targets_fast(d, &self.y, &self.schedule, t),
        }
    }

    /// Mean of step `t` at the rows of `test_xs`: `k(x*, x)(K + γ_t I)⁻¹ y_{t-1}`.
    pub fn predict_mean(&self, t: usize, test_xs: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_step(t, false)?;
        let cross = cross_covariance(test_xs, &self.train_xs, &self.params)?;
        let gamma = self.schedule.gammas()[t - 1];
        let weights = match &self.decomp {
            None => shifted_cholesky(&self.gram, gamma)?.solve(&self.fit_targets[t - 1]),
            Some(d) => {
                let mut factors = shrinkage_factors(d, &self.schedule.gammas()[..t - 1]);
                for (f, &l) in factors.iter_mut().zip(d.eigenvalues().iter()) {
                    *f /= l + gamma;
                }
                d.apply_diagonal(&factors, &self.y)
            }
        };
        Ok(cross * weights)
    }

    /// Mean and covariance of step `t` at the rows of `test_xs`.
    pub fn predict(&self, t: usize, test_xs: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mean = self.predict_mean(t, test_xs)?;
        let gamma = self.schedule.gammas()[t - 1];
        let cross = cross_covariance(test_xs, &self.train_xs, &self.params)?;
        let prior = cross_covariance(test_xs, test_xs, &self.params)?;
        let reduction = match &self.decomp {
            None => {
                let chol = shifted_cholesky(&self.gram, gamma)?;
                &cross * chol.solve(&cross.transpose())
            }
            Some(d) => {
                let projected = &cross * d.eigenvectors();
                d.scale_columns(&projected, |l| 1.0 / (l + gamma)) * projected.transpose()
            }
        };
        Ok((mean, symmetric_clamped(prior - reduction)))
    }

    /// `Σ_t = K - K(K + γ_t I)⁻¹K` at the training inputs.
    pub fn step_covariance(&self, t: usize) -> Result<DMatrix<f64>> {
        self.check_step(t, false)?;
        let gamma = self.schedule.gammas()[t - 1];
        let cov = match &self.decomp {
            None => {
                let chol = shifted_cholesky(&self.gram, gamma)?;
                &self.gram - &self.gram * chol.solve(&self.gram)
            }
            Some(d) => d.matrix_function(|l| l - l * l / (l + gamma)),
        };
        Ok(symmetric_clamped(cov))
    }
}

/// Runs the distribution-centric recursion literally for `steps` steps.
///
/// The returned chain evaluates `(m_t, k_t)` for every `t ≤ steps`.
pub fn distribution_centric_recursive(
    data: &Dataset,
    params: &KernelParams,
    schedule: &DistillSchedule,
    steps: usize,
) -> Result<PosteriorChain> {
    let gammas = schedule.prefix(steps)?;
    let mut chain = PosteriorChain::new(data.xs.clone(), *params)?;
    for (s, &gamma) in gammas.iter().enumerate() {
        let factor = CovFactor::shifted(chain.current_gram(), gamma).map_err(Error::at_step(s + 1))?;
        let weights = factor.apply_vector(&(&data.ys - chain.current_mean()));
        // I - S K = γ S, free of cancellation
        let complement = factor.matrix() * gamma;
        chain.push_with_complement(weights, factor, complement)?;
    }
    Ok(chain)
}

/// The closed-form solution of `steps` distribution-centric steps: one
/// ordinary fit with noise `1/γ⁻`.
pub fn distribution_centric_model(
    data: &Dataset,
    params: &KernelParams,
    schedule: &DistillSchedule,
    steps: usize,
) -> Result<GprModel> {
    let noise = effective_noise(schedule, steps)?.effective;
    fit_gpr(data, params, noise, PriorMean::zero())
}

/// Posterior mean and covariance at `test_xs` after `steps` distribution-centric steps.
pub fn distribution_centric_closed_form(
    data: &Dataset,
    params: &KernelParams,
    schedule: &DistillSchedule,
    steps: usize,
    test_xs: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    distribution_centric_model(data, params, schedule, steps)?.predict(test_xs)
}

/// Posterior of a GPR fitted to `copies` stacked replicas of the data.
#[derive(Debug, Clone)]
pub struct ReplicatedFit {
    pub copies: usize,
    /// Posterior mean at every replicated training point (`copies · N`).
    pub train_mean: DVector<f64>,
    /// Posterior covariance over the replicated training points.
    pub train_cov: DMatrix<f64>,
    pub test_mean: DVector<f64>,
    pub test_cov: DMatrix<f64>,
}

impl ReplicatedFit {
    /// The `i`-th length-`N` block of the training mean.
    pub fn mean_block(&self, i: usize) -> DVector<f64> {
        let n = self.train_mean.len() / self.copies;
        self.train_mean.rows(i * n, n).into_owned()
    }

    /// Block `(i, j)` of the training covariance.
    pub fn cov_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let n = self.train_mean.len() / self.copies;
        self.train_cov.view((i * n, j * n), (n, n)).into_owned()
    }
}

/// Brute-force GPR on `copies` replicas of the dataset with noise `noise`.
pub fn fit_replicated(
    data: &Dataset,
    params: &KernelParams,
    noise: f64,
    copies: usize,
    test_xs: &DMatrix<f64>,
) -> Result<ReplicatedFit> {
    fit_replicated_with_cap(data, params, noise, copies, test_xs, DEFAULT_REPLICATION_CAP)
}

pub fn fit_replicated_with_cap(
    data: &Dataset,
    params: &KernelParams,
    noise: f64,
    copies: usize,
    test_xs: &DMatrix<f64>,
    cap: usize,
) -> Result<ReplicatedFit> {
    if !(noise > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "replicated fits need positive noise, got {noise}"
        )));
    }
    let rows = data.len().saturating_mul(copies);
    if rows > cap {
        return Err(Error::ReplicationTooLarge { rows, cap });
    }
    let replicated = data.replicate(copies)?;
    let k = gram(&replicated.xs, params, false)?.values;
    let chol = shifted_cholesky(&k, noise)?;

    let train_mean = &k * chol.solve(&replicated.ys);
    let train_cov = symmetric_clamped(&k - &k * chol.solve(&k));

    let cross = cross_covariance(test_xs, &replicated.xs, params)?;
    let test_mean = &cross * chol.solve(&replicated.ys);
    let prior = cross_covariance(test_xs, test_xs, params)?;
    let test_cov = symmetric_clamped(prior - &cross * chol.solve(&cross.transpose()));

    Ok(ReplicatedFit {
        copies,
        train_mean,
        train_cov,
        test_mean,
        test_cov,
    })
}
