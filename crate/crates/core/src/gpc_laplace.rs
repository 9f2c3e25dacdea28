//! Binary GP classification with the Laplace approximation.
//!
//! The log posterior is `ψ(f) = -½ (f-m)ᵀK⁻¹(f-m) + log p(y | f)`. The mode is
//! found by Newton–Raphson in the form
//!
//! ```text
//! f_new = m + K (W K + I)⁻¹ (W (f - m) + ∇ log p(y | f))
//! ```
//!
//! which never forms `K⁻¹` or `W⁻¹`. The vector `a = K⁻¹(f - m)` is carried
//! along, so the gradient `∇ log p(y | f) - a` is available without a solve.
//! For the continuous Bernoulli likelihood `W` is replaced by the effective
//! curvature `W - ∇∇C`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::continuous_bernoulli::{cb_terms_at_latent, log_partition};
use crate::error::{Error, Result};
use crate::gpr::{symmetric_clamped, PriorMean};
use crate::kernel::{cross_covariance, decompose_matrix, gram, KernelParams};
use crate::numeric::{expected_sigmoid, log1p_exp, sigmoid};

/// Observation model for targets in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Bernoulli,
    ContinuousBernoulli,
}

impl Likelihood {
    /// `log p(y | f)`, summed over observations.
    pub fn log_likelihood(&self, f: &DVector<f64>, y: &DVector<f64>) -> f64 {
        f.iter()
            .zip(y.iter())
            .map(|(&f, &y)| match self {
                Likelihood::Bernoulli => y * f - log1p_exp(f),
                Likelihood::ContinuousBernoulli => y * f - log_partition(f),
            })
            .sum()
    }

    /// Gradient of `log p(y | f)` and the effective curvature `W` (`W - ∇∇C` for CB).
    pub fn derivatives(&self, f: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = f.len();
        let mut grad = DVector::zeros(n);
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let s = sigmoid(f[i]);
            grad[i] = y[i] - s;
            w[i] = s * (1.0 - s);
            if *self == Likelihood::ContinuousBernoulli {
                let c = cb_terms_at_latent(f[i]);
                grad[i] += c.dlog_c;
                w[i] -= c.d2log_c;
            }
        }
        (grad, w)
    }
}

/// Inputs with targets in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    pub xs: DMatrix<f64>,
    pub ys: DVector<f64>,
    strictly_binary: bool,
}

impl BinaryDataset {
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
        check_unit_targets(&ys)?;
        let strictly_binary = ys.iter().all(|&y| y == 0.0 || y == 1.0);
        Ok(Self { xs, ys, strictly_binary })
    }

    pub fn strictly_binary(&self) -> bool {
        self.strictly_binary
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    /// Same inputs, new targets.
    pub fn with_targets(&self, ys: DVector<f64>) -> Result<Self> {
        Self::new(self.xs.clone(), ys)
    }

    /// The dataset stacked `copies` times.
    pub fn replicate(&self, copies: usize) -> Result<Self> {
        if copies == 0 {
            return Err(Error::InvalidParameter("at least one copy is required".into()));
        }
        let n = self.len();
        let xs = DMatrix::from_fn(n * copies, self.xs.ncols(), |i, j| self.xs[(i % n, j)]);
        let ys = DVector::from_fn(n * copies, |i, _| self.ys[i % n]);
        Self::new(xs, ys)
    }
}

fn check_unit_targets(ys: &DVector<f64>) -> Result<()> {
    if let Some(y) = ys.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::InvalidParameter(format!("targets must lie in [0, 1], got {y}")));
    }
    Ok(())
}

/// Newton–Raphson settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Stop when the ∞-norm of the Newton step falls below this.
    pub step_tolerance: f64,
    /// Stop when the gradient norm of ψ falls below this.
    pub gradient_tolerance: f64,
    /// Step halvings allowed per iteration before giving up.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            step_tolerance: 1e-10,
            gradient_tolerance: 1e-8,
            max_halvings: 30,
        }
    }
}

/// A Laplace approximation at the posterior mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceFit {
    pub f_hat: DVector<f64>,
    /// `K⁻¹ (f̂ - m)`.
    pub alpha: DVector<f64>,
    /// Effective curvature of the likelihood at the mode.
    pub w_diag: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub likelihood: Likelihood,
    pub prior_mean_at_train: DVector<f64>,
    pub gradient_norm: f64,
    /// `ψ` at the initial point and after every accepted Newton step.
    pub log_posterior_trace: Vec<f64>,
}

impl LaplaceFit {
    /// `ψ(f̂)` up to the constant `-½ log|2πK|`.
    pub fn log_posterior(&self) -> f64 {
        *self.log_posterior_trace.last().expect("trace holds the initial point")
    }
}

/// Finds the mode of the log posterior under prior `N(prior_mean, k)`.
///
/// `k` is the (already jittered) prior covariance at the training inputs.
pub fn laplace_mode(
    ys: &DVector<f64>,
    k: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    likelihood: Likelihood,
    opts: &NewtonOptions,
) -> Result<LaplaceFit> {
    let n = ys.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if k.nrows() != n || k.ncols() != n || prior_mean.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if k.nrows() != n { k.nrows() } else { prior_mean.len() },
        });
    }
    check_unit_targets(ys)?;

    let objective = |u: &DVector<f64>, a: &DVector<f64>| -0.5 * u.dot(a) + likelihood.log_likelihood(&(prior_mean + u), ys);

    let mut u = DVector::zeros(n);
    let mut a = DVector::zeros(n);
    let mut psi = objective(&u, &a);
    let mut trace = vec![psi];
    let mut iterations = 0;
    let mut converged = false;

    let (mut grad_lik, mut w) = likelihood.derivatives(prior_mean, ys);
    let mut gradient_norm = (&grad_lik - &a).norm();

    while iterations < opts.max_iters {
        if gradient_norm < opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let b = w.component_mul(&u) + &grad_lik;
        let a_full = newton_weights(k, &w, &b)?;
        let u_full = k * &a_full;

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let u_try = &u + (&u_full - &u) * scale;
            let a_try = &a + (&a_full - &a) * scale;
            let psi_try = objective(&u_try, &a_try);
            let negligible = (&u_full - &u).amax() * scale < opts.step_tolerance;
            if psi_try.is_finite() && (psi_try >= psi - 1e-12 || negligible) {
                accepted = Some((u_try, a_try, psi_try));
                break;
            }
            scale *= 0.5;
        }
        let Some((u_new, a_new, psi_new)) = accepted else {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm,
            });
        };

        let step = (&u_new - &u).amax();
        u = u_new;
        a = a_new;
        psi = psi_new;
        trace.push(psi);
        let f = prior_mean + &u;
        (grad_lik, w) = likelihood.derivatives(&f, ys);
        gradient_norm = (&grad_lik - &a).norm();

        if step < opts.step_tolerance {
            converged = true;
            break;
        }
    }
    if !converged && gradient_norm < opts.gradient_tolerance {
        converged = true;
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            gradient_norm,
        });
    }

    if w.iter().any(|&wi| wi < 0.0) {
        // the Newton form no longer guarantees a maximum; check W + K⁻¹ directly
        log_det_curvature(k, &w)?;
    }

    Ok(LaplaceFit {
        f_hat: prior_mean + &u,
        alpha: a,
        w_diag: w,
        iterations,
        converged,
        likelihood,
        prior_mean_at_train: prior_mean.clone(),
        gradient_norm,
        log_posterior_trace: trace,
    })
}

/// `(I + W K)⁻¹ b`.
fn newton_weights(k: &DMatrix<f64>, w: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = w.len();
    if w.iter().all(|&wi| wi >= 0.0) {
        let sqrt_w = w.map(f64::sqrt);
        let chol = sqrt_w_cholesky(k, &sqrt_w)?;
        let kb = k * b;
        let inner = chol.solve(&sqrt_w.component_mul(&kb));
        Ok(b - sqrt_w.component_mul(&inner))
    } else {
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += w[i] * k[(i, j)];
            }
        }
        LU::new(m).solve(b).ok_or(Error::HessianNotPositiveDefinite { min_eigenvalue: f64::NAN })
    }
}

/// Cholesky factor of `B = I + W½ K W½`.
fn sqrt_w_cholesky(k: &DMatrix<f64>, sqrt_w: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = sqrt_w.len();
    let b = DMatrix::from_fn(n, n, |i, j| {
        let v = sqrt_w[i] * k[(i, j)] * sqrt_w[j];
        if i == j {
            1.0 + v
        } else {
            v
        }
    });
    Cholesky::new(b).ok_or(Error::Singular)
}

/// `log |I + K W|`, i.e. `log |K| + log |W + K⁻¹|`.
///
/// Uses the Cholesky factor of `I + W½KW½` when `W ≥ 0`, otherwise the
/// spectrum of `I + K½ W K½`, failing when that matrix is not positive definite.
pub fn log_det_curvature(k: &DMatrix<f64>, w: &DVector<f64>) -> Result<f64> {
    if w.iter().all(|&wi| wi >= 0.0) {
        let chol = sqrt_w_cholesky(k, &w.map(f64::sqrt))?;
        return Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>());
    }
    let decomp = decompose_matrix(k)?;
    let root = decomp.matrix_function(f64::sqrt);
    let n = w.len();
    let mut m = &root * DMatrix::from_diagonal(w) * &root;
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigenvalues();
    let min_eigenvalue = eig.min();
    if !(min_eigenvalue > 0.0) {
        return Err(Error::HessianNotPositiveDefinite { min_eigenvalue });
    }
    Ok(eig.iter().map(|e| e.ln()).sum())
}

/// `(K + W⁻¹)⁻¹` without inverting `W`.
pub fn posterior_factor(k: &DMatrix<f64>, w: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = w.len();
    if w.iter().all(|&wi| wi >= 0.0) {
        let sqrt_w = w.map(f64::sqrt);
        let chol = sqrt_w_cholesky(k, &sqrt_w)?;
        let inner = chol.inverse();
        Ok(DMatrix::from_fn(n, n, |i, j| sqrt_w[i] * inner[(i, j)] * sqrt_w[j]))
    } else {
        let mut m = DMatrix::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += w[i] * k[(i, j)];
            }
        }
        let rhs = DMatrix::from_diagonal(w);
        let out = LU::new(m).solve(&rhs).ok_or(Error::Singular)?;
        Ok((&out + out.transpose()) * 0.5)
    }
}

/// Laplace approximation to `log p(y)`:
/// `ψ(f̂) + (N/2) log 2π - ½ log|H|`, with `H = W + K⁻¹` (CB: `W + K⁻¹ - ∇∇C`).
pub fn laplace_marginal_loglik(fit: &LaplaceFit, k: &DMatrix<f64>, ys: &DVector<f64>) -> Result<f64> {
    let u = &fit.f_hat - &fit.prior_mean_at_train;
    let psi = -0.5 * u.dot(&fit.alpha) + fit.likelihood.log_likelihood(&fit.f_hat, ys);
    Ok(psi - 0.5 * log_det_curvature(k, &fit.w_diag)?)
}

/// `ψ(f)` evaluated with an explicit Cholesky solve against `K`.
pub fn log_posterior(
    f: &DVector<f64>,
    ys: &DVector<f64>,
    k: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    likelihood: Likelihood,
) -> Result<f64> {
    let chol = Cholesky::new(k.clone()).ok_or(Error::Singular)?;
    let u = f - prior_mean;
    Ok(-0.5 * u.dot(&chol.solve(&u)) + likelihood.log_likelihood(f, ys))
}

/// `∇ψ(f) = ∇ log p(y | f) - K⁻¹ (f - m)` with an explicit Cholesky solve.
pub fn log_posterior_gradient(
    f: &DVector<f64>,
    ys: &DVector<f64>,
    k: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    likelihood: Likelihood,
) -> Result<DVector<f64>> {
    let chol = Cholesky::new(k.clone()).ok_or(Error::Singular)?;
    let (grad, _) = likelihood.derivatives(f, ys);
    Ok(grad - chol.solve(&(f - prior_mean)))
}

/// How to turn the latent predictive into a class probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMethod {
    /// `σ(μ*)`.
    LatentMean,
    /// `E[σ(f*)]` under `N(μ*, Σ*_ii)` by Gauss–Hermite quadrature.
    Quadrature,
}

/// Probabilities from latent means and variances.
pub fn probabilities(mean: &DVector<f64>, variance: &DVector<f64>, method: ProbabilityMethod) -> DVector<f64> {
    match method {
        ProbabilityMethod::LatentMean => mean.map(sigmoid),
        ProbabilityMethod::Quadrature => mean.zip_map(variance, expected_sigmoid),
    }
}

/// Latent predictive `N(μ*, Σ*)` at the rows of `test_xs`.
///
/// `k` must be the prior covariance the fit was computed with.
pub fn gpc_predict_latent(
    fit: &LaplaceFit,
    k: &DMatrix<f64>,
    train_xs: &DMatrix<f64>,
    test_xs: &DMatrix<f64>,
    params: &KernelParams,
    prior_mean: &PriorMean,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let cross = cross_covariance(test_xs, train_xs, params)?;
    let mean = prior_mean.eval_rows(test_xs) + &cross * &fit.alpha;
    let factor = posterior_factor(k, &fit.w_diag)?;
    let prior = cross_covariance(test_xs, test_xs, params)?;
    let cov = symmetric_clamped(prior - &cross * factor * cross.transpose());
    Ok((mean, cov))
}

/// A fitted GP classifier: training inputs, prior and Laplace fit.
#[derive(Debug, Clone)]
pub struct GpcModel {
    pub train_xs: DMatrix<f64>,
    pub params: KernelParams,
    /// Extra diagonal noise on the training Gram matrix (on top of jitter).
    pub reg_gamma: f64,
    pub prior_mean: PriorMean,
    pub fit: LaplaceFit,
    gram: DMatrix<f64>,
}

impl GpcModel {
    /// Fits with the Gram matrix `K + (jitter + reg_gamma) I`.
    pub fn fit(
        data: &BinaryDataset,
        params: &KernelParams,
        likelihood: Likelihood,
        reg_gamma: f64,
        prior_mean: PriorMean,
        opts: &NewtonOptions,
    ) -> Result<Self> {
        if !(reg_gamma >= 0.0 && reg_gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "regularization must be non-negative, got {reg_gamma}"
            )));
        }
        let mut k = gram(&data.xs, params, true)?.values;
        for i in 0..k.nrows() {
            k[(i, i)] += reg_gamma;
        }
        let m = prior_mean.eval_rows(&data.xs);
        let fit = laplace_mode(&data.ys, &k, &m, likelihood, opts)?;
        Ok(Self {
            train_xs: data.xs.clone(),
            params: *params,
            reg_gamma,
            prior_mean,
            fit,
            gram: k,
        })
    }

    /// The prior covariance used in the fit.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn predict_latent(&self, test_xs: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        gpc_predict_latent(&self.fit, &self.gram, &self.train_xs, test_xs, &self.params, &self.prior_mean)
    }

    pub fn predict_proba(&self, test_xs: &DMatrix<f64>, method: ProbabilityMethod) -> Result<DVector<f64>> {
        let (mean, cov) = self.predict_latent(test_xs)?;
        Ok(probabilities(&mean, &cov.diagonal(), method))
    }

    pub fn marginal_loglik(&self, ys: &DVector<f64>) -> Result<f64> {
        laplace_marginal_loglik(&self.fit, &self.gram, ys)
    }
}
