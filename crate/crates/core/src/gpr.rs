//! Ordinary Gaussian process regression.
//!
//! Linear solves go through the spectral decomposition of the Gram matrix so
//! the same factorization can be reused for any noise level.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{cross_covariance, gram, spectral_decompose, GramMatrix, KernelParams, SpectralDecomp};

/// Training inputs (rows of `xs`) and real-valued targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub xs: DMatrix<f64>,
    pub ys: DVector<f64>,
}

impl Dataset {
    pub fn new(xs: DMatrix<f64>, ys: DVector<f64>) -> Result<Self> {
        if xs.nrows() == 0 || xs.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        if xs.nrows() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.nrows(),
                found: ys.len(),
            });
        }
        Ok(Self { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }

    /// The dataset stacked `copies` times.
    pub fn replicate(&self, copies: usize) -> Result<Self> {
        if copies == 0 {
            return Err(Error::InvalidParameter("at least one copy is required".into()));
        }
        let n = self.len();
        let xs = DMatrix::from_fn(n * copies, self.dim(), |i, j| self.xs[(i % n, j)]);
        let ys = DVector::from_fn(n * copies, |i, _| self.ys[i % n]);
        Ok(Self { xs, ys })
    }
}

type MeanFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Prior mean function of a GP; zero unless a closure is supplied.
#[derive(Clone, Default)]
pub struct PriorMean(Option<Arc<MeanFn>>);

impl PriorMean {
    pub fn zero() -> Self {
        Self(None)
    }

    pub fn from_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Some(Arc::new(f)))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_none()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.as_ref().map_or(0.0, |f| f(x))
    }

    /// Evaluates the mean at every row of `xs`.
    pub fn eval_rows(&self, xs: &DMatrix<f64>) -> DVector<f64> {
        match &self.0 {
            None => DVector::zeros(xs.nrows()),
            Some(f) => {
                let mut row = vec![0.0; xs.ncols()];
                DVector::from_fn(xs.nrows(), |i, _| {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = xs[(i, j)];
                    }
                    f(&row)
                })
            }
        }
    }
}

impl fmt::Debug for PriorMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => f.write_str("PriorMean::Zero"),
            Some(_) => f.write_str("PriorMean::Fn"),
        }
    }
}

/// A fitted GP regression posterior.
#[derive(Debug, Clone)]
pub struct GprModel {
    pub train_xs: DMatrix<f64>,
    /// `(K + γI)⁻¹ (y - m(x))`.
    pub alpha_weights: DVector<f64>,
    pub params: KernelParams,
    pub noise: f64,
    pub prior_mean: PriorMean,
    decomp: SpectralDecomp,
}

/// Fits a GP regression model with noise variance `noise`.
///
/// The Gram matrix is built without jitter; `noise = 0` is only valid when it
/// is invertible.
pub fn fit_gpr(data: &Dataset, params: &KernelParams, noise: f64, prior_mean: PriorMean) -> Result<GprModel> {
    let k = gram(&data.xs, params, false)?;
    fit_gpr_with_gram(data, &k, noise, prior_mean)
}

/// Same as [`fit_gpr`] for a precomputed Gram matrix (jittered or not).
pub fn fit_gpr_with_gram(data: &Dataset, k: &GramMatrix, noise: f64, prior_mean: PriorMean) -> Result<GprModel> {
    let decomp = spectral_decompose(k)?;
    fit_gpr_with_decomp(data, k.params, decomp, noise, prior_mean)
}

pub(crate) fn fit_gpr_with_decomp(
    data: &Dataset,
    params: KernelParams,
    decomp: SpectralDecomp,
    noise: f64,
    prior_mean: PriorMean,
) -> Result<GprModel> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise must be non-negative, got {noise}")));
    }
    if decomp.dim() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: decomp.dim(),
        });
    }
    let residual = &data.ys - prior_mean.eval_rows(&data.xs);
    let alpha_weights = decomp.solve_shifted(noise, &residual)?;
    Ok(GprModel {
        train_xs: data.xs.clone(),
        alpha_weights,
        params,
        noise,
        prior_mean,
        decomp,
    })
}

impl GprModel {
    pub fn decomposition(&self) -> &SpectralDecomp {
        &self.decomp
    }

    /// Posterior mean at the rows of `test_xs`.
    pub fn predict_mean(&self, test_xs: &DMatrix<f64>) -> Result<DVector<f64>> {
        let cross = cross_covariance(test_xs, &self.train_xs, &self.params)?;
        Ok(self.prior_mean.eval_rows(test_xs) + cross * &self.alpha_weights)
    }

    /// Posterior predictive mean and covariance of the latent function.
    pub fn predict(&self, test_xs: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let cross = cross_covariance(test_xs, &self.train_xs, &self.params)?;
        let mean = self.prior_mean.eval_rows(test_xs) + &cross * &self.alpha_weights;
        let prior = cross_covariance(test_xs, test_xs, &self.params)?;
        let projected = &cross * self.decomp.eigenvectors();
        let noise = self.noise;
        let weighted = self.decomp.scale_columns(&projected, |l| 1.0 / (l + noise));
        let cov = symmetric_clamped(prior - weighted * projected.transpose());
        Ok((mean, cov))
    }

    /// Log marginal likelihood `log N(y | m(x), K + γI)` of the training targets.
    pub fn log_marginal_likelihood(&self, ys: &DVector<f64>) -> Result<f64> {
        let residual = ys - self.prior_mean.eval_rows(&self.train_xs);
        let n = residual.len() as f64;
        let log_det = self.decomp.log_det_shifted(self.noise)?;
        Ok(-0.5 * residual.dot(&self.alpha_weights) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Symmetrizes and clamps the diagonal of a covariance at zero.
pub(crate) fn symmetric_clamped(m: DMatrix<f64>) -> DMatrix<f64> {
    let mut out = (&m + m.transpose()) * 0.5;
    for i in 0..out.nrows() {
        if out[(i, i)] < 0.0 {
            out[(i, i)] = 0.0;
        }
    }
    out
}

/// Negative log marginal likelihood of a GP regression fit, for grid search.
pub fn gpr_negative_log_likelihood(data: &Dataset, params: &KernelParams, noise: f64) -> Result<f64> {
    let model = fit_gpr(data, params, noise, PriorMean::zero())?;
    Ok(-model.log_marginal_likelihood(&data.ys)?)
}
