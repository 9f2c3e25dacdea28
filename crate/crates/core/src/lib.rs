//! Self-distillation for Gaussian process regression and classification.
//!
//! Two families of procedures are provided for each model class:
//!
//! * **data-centric** distillation refits the model to its own posterior mean
//!   predictions at the training inputs ([`gpr_distill::DataCentricGpr`],
//!   [`gpc_distill::data_centric_gpc`]);
//! * **distribution-centric** distillation reuses the posterior GP as the next
//!   prior ([`gpr_distill::distribution_centric_recursive`],
//!   [`gpc_distill::distribution_centric_gpc_iterated`]).
//!
//! For regression both collapse to closed forms, which this crate implements
//! next to the literal iterations so that each can check the other. For
//! classification the distilled targets are continuous, so steps after the
//! first use the continuous Bernoulli likelihood.

pub mod chain;
pub mod continuous_bernoulli;
pub mod error;
pub mod gpc_distill;
pub mod gpc_laplace;
pub mod gpr;
pub mod gpr_distill;
pub mod hyperopt;
pub mod kernel;
pub mod numeric;

pub use error::{Error, Result};
pub use gpc_laplace::{BinaryDataset, GpcModel, LaplaceFit, Likelihood, NewtonOptions, ProbabilityMethod};
pub use gpr::{Dataset, GprModel, PriorMean};
pub use gpr_distill::{DataCentricGpr, DataCentricPath, DistillSchedule, EffectiveNoise};
pub use kernel::{GramMatrix, KernelParams, SpectralDecomp};
