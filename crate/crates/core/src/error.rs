use thiserror::Error;

/// Errors produced by the fitting and distillation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is indefinite: eigenvalue {min_eigenvalue:e} against largest {max_eigenvalue:e}")]
    Indefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("linear system is singular")]
    Singular,

    #[error("newton iteration did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("negative hessian of the log posterior is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    HessianNotPositiveDefinite { min_eigenvalue: f64 },

    #[error("schedule has {available} entries but {requested} steps were requested")]
    ScheduleTooShort { requested: usize, available: usize },

    #[error("replicated system has {rows} rows, above the cap of {cap}")]
    ReplicationTooLarge { rows: usize, cap: usize },

    #[error("every grid cell failed to evaluate")]
    AllCellsFailed,

    #[error("distillation step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_step(step: usize) -> impl FnOnce(Error) -> Error {
        move |source| Error::Step {
            step,
            source: Box::new(source),
        }
    }

    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotSymmetric { .. }
            | Error::Indefinite { .. }
            | Error::Singular
            | Error::NonConvergence { .. }
            | Error::HessianNotPositiveDefinite { .. }
            | Error::AllCellsFailed => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
