//! RBF kernel evaluation, Gram-matrix assembly and the symmetric spectral
//! decomposition that the closed-form distillation results are built on.
//!
//! Input points are stored as the rows of an `N × d` matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal term added for numerical stability when a caller asks for it.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Negative eigenvalues down to `-CLAMP_TOLERANCE * λ_max` are treated as roundoff.
pub const CLAMP_TOLERANCE: f64 = 1e-10;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Hyperparameters of the scaled radial basis kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// σ_f², the kernel value at zero distance.
    pub signal_variance: f64,
    /// l, dividing the squared distance as `‖x - x'‖² / (2 l)`.
    pub length_scale: f64,
    /// Diagonal stabilizer, only applied to Gram matrices built with `add_jitter`.
    pub jitter: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, length_scale: f64, jitter: f64) -> Result<Self> {
        let params = Self {
            signal_variance,
            length_scale,
            jitter,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters with the default jitter of `1e-8`.
    pub fn rbf(signal_variance: f64, length_scale: f64) -> Result<Self> {
        Self::new(signal_variance, length_scale, DEFAULT_JITTER)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.length_scale > 0.0 && self.length_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "length scale must be positive, got {}",
                self.length_scale
            )));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jitter must be non-negative, got {}",
                self.jitter
            )));
        }
        Ok(())
    }

    pub fn with_jitter(self, jitter: f64) -> Self {
        Self { jitter, ..self }
    }

    /// The kernel `scale · k`, used by the covariance-scaling shortcut.
    pub fn scaled(self, scale: f64) -> Self {
        Self {
            signal_variance: self.signal_variance * scale,
            ..self
        }
    }

    #[inline]
    fn eval_sq_dist(&self, sq_dist: f64) -> f64 {
        self.signal_variance * (-sq_dist / (2.0 * self.length_scale)).exp()
    }
}

/// `σ_f² exp(-‖x1 - x2‖² / (2 l))`.
pub fn rbf_kernel(x1: &[f64], x2: &[f64], params: &KernelParams) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x1.len(),
            found: x2.len(),
        });
    }
    let sq_dist: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(params.eval_sq_dist(sq_dist))
}

/// Builds an `N × d` point matrix from a list of rows.
pub fn points_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let first = rows.first().ok_or(Error::EmptyInput)?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]))
}

/// One-dimensional points `x_i`, one per row.
pub fn points_1d(xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(xs.len(), 1, xs)
}

/// Kernel matrix between the rows of `a` and the rows of `b`, never jittered.
pub fn cross_covariance(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    params: &KernelParams,
) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    let dim = a.ncols();
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let mut sq = 0.0;
        for k in 0..dim {
            let d = a[(i, k)] - b[(j, k)];
            sq += d * d;
        }
        params.eval_sq_dist(sq)
    }))
}

/// A kernel Gram matrix together with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub params: KernelParams,
    pub jittered: bool,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Wraps an arbitrary symmetric matrix (e.g. a posterior covariance).
    pub fn from_matrix(values: DMatrix<f64>, params: KernelParams) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        if values.nrows() != values.ncols() {
            return Err(Error::DimensionMismatch {
                expected: values.nrows(),
                found: values.ncols(),
            });
        }
        check_symmetric(&values)?;
        Ok(Self {
            values,
            params,
            jittered: false,
        })
    }
}

/// `K = k(x, xᵀ)`, with `params.jitter` on the diagonal when `add_jitter` is set.
pub fn gram(xs: &DMatrix<f64>, params: &KernelParams, add_jitter: bool) -> Result<GramMatrix> {
    if xs.nrows() == 0 || xs.ncols() == 0 {
        return Err(Error::EmptyInput);
    }
    params.validate()?;
    let mut values = cross_covariance(xs, xs, params)?;
    // exact symmetry and an exact σ_f² diagonal, independent of summation order
    for i in 0..values.nrows() {
        for j in 0..i {
            values[(j, i)] = values[(i, j)];
        }
        values[(i, i)] = params.signal_variance;
    }
    if add_jitter {
        for i in 0..values.nrows() {
            values[(i, i)] += params.jitter;
        }
    }
    Ok(GramMatrix {
        values,
        params: *params,
        jittered: add_jitter,
    })
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax();
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    let asymmetry = if scale > 0.0 { worst / scale } else { worst };
    if asymmetry > SYMMETRY_TOLERANCE {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// `K = O diag(λ) Oᵀ` with eigenvalues sorted non-increasing and clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomp {
    eigenvectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl SpectralDecomp {
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `O diag(f(λ_i)) Oᵀ`.
    pub fn matrix_function(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = self.scale_columns(&self.eigenvectors, &f);
        scaled * self.eigenvectors.transpose()
    }

    /// `O diag(factors) Oᵀ rhs` for an explicit list of diagonal factors.
    pub fn apply_diagonal(&self, factors: &DVector<f64>, rhs: &DVector<f64>) -> DVector<f64> {
        let coeffs = self.eigenvectors.tr_mul(rhs).component_mul(factors);
        &self.eigenvectors * coeffs
    }

    /// `O diag(f(λ_i)) Oᵀ rhs`.
    pub fn apply(&self, f: impl Fn(f64) -> f64, rhs: &DVector<f64>) -> DVector<f64> {
        let factors = self.eigenvalues.map(f);
        self.apply_diagonal(&factors, rhs)
    }

    /// Coordinates of `v` in the eigenbasis, `Oᵀ v`.
    pub fn coefficients(&self, v: &DVector<f64>) -> DVector<f64> {
        self.eigenvectors.tr_mul(v)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.matrix_function(|l| l)
    }

    /// Checks that `K + shift·I` is numerically invertible.
    pub fn check_shift(&self, shift: f64) -> Result<()> {
        let top = self.eigenvalues[0] + shift;
        let bottom = self.eigenvalues[self.dim() - 1] + shift;
        if !(bottom > f64::EPSILON * top.abs()) || !bottom.is_finite() {
            return Err(Error::Singular);
        }
        Ok(())
    }

    /// `(K + shift·I)⁻¹ rhs`.
    pub fn solve_shifted(&self, shift: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_shift(shift)?;
        Ok(self.apply(|l| 1.0 / (l + shift), rhs))
    }

    /// `log |K + shift·I|` as a sum of logarithms.
    pub fn log_det_shifted(&self, shift: f64) -> Result<f64> {
        self.check_shift(shift)?;
        Ok(self.eigenvalues.iter().map(|l| (l + shift).ln()).sum())
    }

    /// `M diag(f(λ))`, i.e. the columns of `M` scaled by `f` of the eigenvalues.
    pub fn scale_columns(&self, m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut out = m.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[j]);
        }
        out
    }
}

/// Symmetric eigendecomposition with PSD repair.
///
/// Fails when an eigenvalue falls below `-1e-10 λ_max`, which means the
/// matrix was not a valid covariance.
pub fn spectral_decompose(k: &GramMatrix) -> Result<SpectralDecomp> {
    decompose_matrix(&k.values)
}

pub(crate) fn decompose_matrix(m: &DMatrix<f64>) -> Result<SpectralDecomp> {
    if m.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);

    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let max_eigenvalue = eig.eigenvalues[order[0]];
    let min_eigenvalue = eig.eigenvalues[order[n - 1]];
    let floor = -CLAMP_TOLERANCE * max_eigenvalue.max(0.0);
    if min_eigenvalue < floor || (max_eigenvalue <= 0.0 && min_eigenvalue < 0.0) {
        return Err(Error::Indefinite {
            min_eigenvalue,
            max_eigenvalue,
        });
    }

    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SpectralDecomp {
        eigenvectors,
        eigenvalues,
    })
}
