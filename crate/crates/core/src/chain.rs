//! Explicit representation of a sequence of GP posteriors in which each
//! posterior is used as the prior of the next step.
//!
//! Every level `j` stores a mean weight vector `β_j` and a covariance factor
//! `S_j` relative to the prior Gram matrix `K_j = k_j(x, xᵀ)`, so that
//!
//! ```text
//! m_{j+1}(a)   = m_j(a) + k_j(a, xᵀ) β_j
//! k_{j+1}(a,b) = k_j(a,b) - k_j(a, xᵀ) S_j k_j(x, b)
//! ```
//!
//! For regression `S_j = (K_j + γ_j I)⁻¹` and `β_j = S_j (y - m_j(x))`; for the
//! Laplace classifier `S_j = (K_j + W_j⁻¹)⁻¹` and `β_j = K_j⁻¹ (f̂_j - m_j(x))`.
//! Evaluating at new points costs one pass over the levels.
//!
//! Each level also keeps `R_j = I - S_j K_j`, so that `K_{j+1} = K_j R_j` and
//! `k_{j+1}(a, xᵀ) = k_j(a, xᵀ) R_j`. Callers that know a cancellation-free
//! form of `R_j` (`γ S_j` for regression) pass it in directly.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernel::{cross_covariance, gram, KernelParams};

/// `S = D M⁻¹ D` with `M` held as a Cholesky factor and `D` diagonal.
///
/// Quadratic forms `c S cᵀ` are evaluated as `vᵀv` with `v = L⁻¹ D cᵀ`, which
/// keeps them accurate when `M` is badly conditioned.
#[derive(Debug, Clone)]
pub struct CovFactor {
    chol: Cholesky<f64, Dyn>,
    scale: Option<DVector<f64>>,
}

impl CovFactor {
    /// `(K + γ I)⁻¹`.
    pub fn shifted(k: &DMatrix<f64>, gamma: f64) -> Result<Self> {
        let n = k.nrows();
        let chol = Cholesky::new(k + DMatrix::identity(n, n) * gamma).ok_or(Error::Singular)?;
        Ok(Self { chol, scale: None })
    }

    /// `(K + W⁻¹)⁻¹ = W½ (I + W½ K W½)⁻¹ W½` for non-negative `w`.
    pub fn laplace(k: &DMatrix<f64>, w: &DVector<f64>) -> Result<Self> {
        if let Some(min) = w.iter().copied().find(|wi| !(*wi >= 0.0)) {
            return Err(Error::HessianNotPositiveDefinite { min_eigenvalue: min });
        }
        let n = w.len();
        let root = w.map(f64::sqrt);
        let b = DMatrix::from_fn(n, n, |i, j| {
            let v = root[i] * k[(i, j)] * root[j];
            if i == j {
                1.0 + v
            } else {
                v
            }
        });
        let chol = Cholesky::new(b).ok_or(Error::Singular)?;
        Ok(Self {
            chol,
            scale: Some(root),
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    fn scale_rows(&self, mut m: DMatrix<f64>) -> DMatrix<f64> {
        if let Some(d) = &self.scale {
            for (mut row, di) in m.row_iter_mut().zip(d.iter()) {
                row *= *di;
            }
        }
        m
    }

    /// `S m`.
    pub fn apply(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.scale_rows(self.chol.solve(&self.scale_rows(m.clone())))
    }

    pub fn apply_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        DVector::from_column_slice(self.apply(&m).as_slice())
    }

    /// `S` as a dense matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let s = self.apply(&DMatrix::identity(n, n));
        (&s + s.transpose()) * 0.5
    }

    /// `c S cᵀ`, exactly symmetric and positive semidefinite.
    pub fn quadratic_form(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let rhs = self.scale_rows(c.transpose());
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&rhs)
            .expect("Cholesky factor has a positive diagonal");
        v.transpose() * v
    }
}

#[derive(Debug, Clone)]
struct Level {
    mean_weights: DVector<f64>,
    factor: CovFactor,
    complement: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct PosteriorChain {
    train_xs: DMatrix<f64>,
    base: KernelParams,
    levels: Vec<Level>,
    // K_t and m_t(x) for the level not yet pushed
    next_gram: DMatrix<f64>,
    next_mean: DVector<f64>,
}

impl PosteriorChain {
    /// The prior `GP(0, k)` on the given training inputs.
    pub fn new(train_xs: DMatrix<f64>, base: KernelParams) -> Result<Self> {
        let next_gram = gram(&train_xs, &base, false)?.values;
        let n = train_xs.nrows();
        Ok(Self {
            train_xs,
            base,
            levels: Vec::new(),
            next_gram,
            next_mean: DVector::zeros(n),
        })
    }

    pub fn train_xs(&self) -> &DMatrix<f64> {
        &self.train_xs
    }

    pub fn base_params(&self) -> &KernelParams {
        &self.base
    }

    /// Number of conditioning steps applied so far.
    pub fn steps(&self) -> usize {
        self.levels.len()
    }

    /// `K_t = k_t(x, xᵀ)` for the current (latest) prior.
    pub fn current_gram(&self) -> &DMatrix<f64> {
        &self.next_gram
    }

    /// `m_t(x)` for the current prior.
    pub fn current_mean(&self) -> &DVector<f64> {
        &self.next_mean
    }

    /// Conditions the current prior with the given weights and factor.
    pub fn push(&mut self, mean_weights: DVector<f64>, factor: CovFactor) -> Result<()> {
        let n = self.train_xs.nrows();
        if factor.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: factor.dim(),
            });
        }
        let complement = DMatrix::identity(n, n) - factor.apply(&self.next_gram);
        self.push_with_complement(mean_weights, factor, complement)
    }

    /// Like [`push`](Self::push) with `I - S K` supplied by the caller.
    pub fn push_with_complement(
        &mut self,
        mean_weights: DVector<f64>,
        factor: CovFactor,
        complement: DMatrix<f64>,
    ) -> Result<()> {
        let n = self.train_xs.nrows();
        for found in [mean_weights.len(), factor.dim(), complement.nrows(), complement.ncols()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        let k = &self.next_gram;
        self.next_mean = &self.next_mean + k * &mean_weights;
        let reduced = k * &complement;
        self.next_gram = (&reduced + reduced.transpose()) * 0.5;
        self.levels.push(Level {
            mean_weights,
            factor,
            complement,
        });
        Ok(())
    }

    /// `k_j(a, xᵀ)` for `j = 0..steps`, starting from the base kernel.
    fn cross_terms(&self, a: &DMatrix<f64>, steps: usize) -> Result<Vec<DMatrix<f64>>> {
        let mut terms = Vec::with_capacity(steps);
        let mut c = cross_covariance(a, &self.train_xs, &self.base)?;
        for (j, level) in self.levels[..steps].iter().enumerate() {
            let next = (j + 1 < steps).then(|| &c * &level.complement);
            terms.push(c);
            match next {
                Some(n) => c = n,
                None => break,
            }
        }
        Ok(terms)
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step > self.steps() {
            return Err(Error::ScheduleTooShort {
                requested: step,
                available: self.steps(),
            });
        }
        Ok(())
    }

    /// Mean `m_step(a)` at the rows of `a`.
    pub fn mean(&self, a: &DMatrix<f64>, step: usize) -> Result<DVector<f64>> {
        self.check_step(step)?;
        let terms = self.cross_terms(a, step)?;
        let mut mean = DVector::zeros(a.nrows());
        for (c, level) in terms.iter().zip(&self.levels) {
            mean += c * &level.mean_weights;
        }
        Ok(mean)
    }

    /// Mean `m_step(a)` and covariance `k_step(a, aᵀ)` at the rows of `a`.
    pub fn predict(&self, a: &DMatrix<f64>, step: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_step(step)?;
        let terms = self.cross_terms(a, step)?;
        let mut mean = DVector::zeros(a.nrows());
        let mut cov = cross_covariance(a, a, &self.base)?;
        for (c, level) in terms.iter().zip(&self.levels) {
            mean += c * &level.mean_weights;
            cov -= level.factor.quadratic_form(c);
        }
        Ok((mean, crate::gpr::symmetric_clamped(cov)))
    }
}
