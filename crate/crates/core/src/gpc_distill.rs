//! Self-distillation for GP classification.
//!
//! Data-centric: step 1 is an ordinary Bernoulli classifier; every later step
//! is refitted to the previous step's predictions at the training inputs.
//! Those targets are continuous, so by default the refits use the continuous
//! Bernoulli likelihood.
//!
//! Distribution-centric: the Laplace posterior of step `t` is the prior of step
//! `t+1`. Fitting once with the prior covariance `t·k` is exactly equivalent to
//! `t`-fold data replication and approximates the iterated chain.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain::{CovFactor, PosteriorChain};
use crate::error::{Error, Result};
use crate::gpc_laplace::{
    laplace_marginal_loglik, laplace_mode, probabilities, BinaryDataset, GpcModel, LaplaceFit, Likelihood,
    NewtonOptions, ProbabilityMethod,
};
use crate::gpr::PriorMean;
use crate::kernel::KernelParams;
use crate::numeric::expected_sigmoid;

/// Which prediction of step `t` becomes the training target of step `t+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// `E_q[σ(f) | y]` under the latent predictive.
    SoftMean,
    /// `σ(f̂)`.
    LatentSigmoid,
    /// `1` where the predicted probability is at least one half, else `0`.
    HardThreshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpcDistillConfig {
    pub steps: usize,
    pub target_kind: TargetKind,
    /// Per-step diagonal noise added to the Gram matrix.
    pub reg_gammas: Option<Vec<f64>>,
    /// Likelihood for steps after the first.
    pub distilled_likelihood: Likelihood,
    /// Use the `t·k` prior instead of iterating (distribution-centric only).
    pub scaled_approximation: bool,
    pub newton: NewtonOptions,
}

impl Default for GpcDistillConfig {
    fn default() -> Self {
        Self {
            steps: 1,
            target_kind: TargetKind::SoftMean,
            reg_gammas: None,
            distilled_likelihood: Likelihood::ContinuousBernoulli,
            scaled_approximation: false,
            newton: NewtonOptions::default(),
        }
    }
}

impl GpcDistillConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("at least one step is required".into()));
        }
        if let Some(r) = &self.reg_gammas {
            if r.len() != self.steps {
                return Err(Error::InvalidParameter(format!(
                    "{} regularization values for {} steps",
                    r.len(),
                    self.steps
                )));
            }
            if let Some(g) = r.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
                return Err(Error::InvalidParameter(format!("regularization must be non-negative, got {g}")));
            }
        }
        Ok(())
    }

    fn reg_gamma(&self, step: usize) -> f64 {
        self.reg_gammas.as_ref().map_or(0.0, |r| r[step])
    }
}

/// Targets at the training inputs derived from a fitted classifier.
pub fn distilled_targets(model: &GpcModel, kind: TargetKind) -> Result<DVector<f64>> {
    let (mean, cov) = model.predict_latent(&model.train_xs)?;
    let targets = match kind {
        TargetKind::SoftMean => mean.zip_map(&cov.diagonal(), expected_sigmoid),
        TargetKind::LatentSigmoid => model.fit.f_hat.map(crate::numeric::sigmoid),
        TargetKind::HardThreshold => mean.map(|m| if m >= 0.0 { 1.0 } else { 0.0 }),
    };
    // quadrature roundoff can leave values a hair outside [0, 1]
    Ok(targets.map(|t| t.clamp(0.0, 1.0)))
}

/// Runs `config.steps` steps of data-centric distillation.
///
/// Returns one fitted classifier per step; step 1 uses the Bernoulli
/// likelihood on the observed binary labels.
pub fn data_centric_gpc(
    data: &BinaryDataset,
    params: &KernelParams,
    config: &GpcDistillConfig,
) -> Result<Vec<GpcModel>> {
    config.validate()?;
    if !data.strictly_binary() {
        return Err(Error::InvalidParameter("the first step needs binary labels".into()));
    }
    let mut models: Vec<GpcModel> = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (targets, likelihood) = match models.last() {
            None => (data.clone(), Likelihood::Bernoulli),
            Some(prev) => {
                let ys = distilled_targets(prev, config.target_kind).map_err(Error::at_step(step + 1))?;
                (data.with_targets(ys)?, config.distilled_likelihood)
            }
        };
        let model = GpcModel::fit(
            &targets,
            params,
            likelihood,
            config.reg_gamma(step),
            PriorMean::zero(),
            &config.newton,
        )
        .map_err(Error::at_step(step + 1))?;
        models.push(model);
    }
    Ok(models)
}

/// Laplace marginal log-likelihood of a continuous Bernoulli fit, with the
/// normalizer's curvature included in the log-determinant.
pub fn cb_marginal_loglik(fit: &LaplaceFit, k: &DMatrix<f64>, targets: &DVector<f64>) -> Result<f64> {
    if fit.likelihood != Likelihood::ContinuousBernoulli {
        return Err(Error::InvalidParameter("expected a continuous Bernoulli fit".into()));
    }
    laplace_marginal_loglik(fit, k, targets)
}

/// The result of iterating the distribution-centric recursion.
#[derive(Debug, Clone)]
pub struct IteratedGpc {
    chain: PosteriorChain,
    fits: Vec<LaplaceFit>,
}

impl IteratedGpc {
    pub fn steps(&self) -> usize {
        self.fits.len()
    }

    /// Laplace fit of step `t` (1-based).
    pub fn fit(&self, t: usize) -> Option<&LaplaceFit> {
        t.checked_sub(1).and_then(|i| self.fits.get(i))
    }

    pub fn chain(&self) -> &PosteriorChain {
        &self.chain
    }

    /// Latent posterior `GP(m_t, k_t)` at the rows of `test_xs`.
    pub fn predict_latent(&self, test_xs: &DMatrix<f64>, t: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.chain.predict(test_xs, t)
    }

    pub fn predict_proba(&self, test_xs: &DMatrix<f64>, t: usize, method: ProbabilityMethod) -> Result<DVector<f64>> {
        let (mean, cov) = self.predict_latent(test_xs, t)?;
        Ok(probabilities(&mean, &cov.diagonal(), method))
    }
}

/// Iterates the distribution-centric recursion for `steps` steps, re-estimating
/// `W_t` at each step's own mode.
pub fn distribution_centric_gpc_iterated(
    data: &BinaryDataset,
    params: &KernelParams,
    steps: usize,
    opts: &NewtonOptions,
) -> Result<IteratedGpc> {
    if steps == 0 {
        return Err(Error::InvalidParameter("at least one step is required".into()));
    }
    let mut chain = PosteriorChain::new(data.xs.clone(), *params)?;
    let mut fits = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut k = chain.current_gram().clone();
        for i in 0..k.nrows() {
            k[(i, i)] += params.jitter;
        }
        let fit = laplace_mode(&data.ys, &k, chain.current_mean(), Likelihood::Bernoulli, opts)
            .map_err(Error::at_step(step + 1))?;
        let factor = CovFactor::laplace(&k, &fit.w_diag).map_err(Error::at_step(step + 1))?;
        chain.push(fit.alpha.clone(), factor)?;
        fits.push(fit);
    }
    Ok(IteratedGpc { chain, fits })
}

/// One Laplace fit under the prior `GP(0, t·k)`.
pub fn distribution_centric_gpc_scaled(
    data: &BinaryDataset,
    params: &KernelParams,
    steps: usize,
    opts: &NewtonOptions,
) -> Result<GpcModel> {
    if steps == 0 {
        return Err(Error::InvalidParameter("at least one step is required".into()));
    }
    GpcModel::fit(
        data,
        &params.scaled(steps as f64),
        Likelihood::Bernoulli,
        0.0,
        PriorMean::zero(),
        opts,
    )
}

/// Mean squared difference between iterated and scaled probabilities, one
/// value per step. `scaled[t-1]` must be the scaled fit for `t` steps.
pub fn approximation_error(
    iterated: &IteratedGpc,
    scaled: &[GpcModel],
    test_xs: &DMatrix<f64>,
    method: ProbabilityMethod,
) -> Result<Vec<f64>> {
    if scaled.len() != iterated.steps() {
        return Err(Error::DimensionMismatch {
            expected: iterated.steps(),
            found: scaled.len(),
        });
    }
    scaled
        .iter()
        .enumerate()
        .map(|(i, model)| {
            let a = iterated.predict_proba(test_xs, i + 1, method)?;
            let b = model.predict_proba(test_xs, method)?;
            Ok((a - b).norm_squared() / test_xs.nrows() as f64)
        })
        .collect()
}

/// Mean binary cross-entropy of `probs` against `ys`.
pub fn log_loss(probs: &DVector<f64>, ys: &DVector<f64>) -> f64 {
    let eps = 1e-15;
    probs
        .iter()
        .zip(ys.iter())
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / probs.len() as f64
}
