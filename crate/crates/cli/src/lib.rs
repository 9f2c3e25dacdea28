//! Command-line front end for GP self-distillation: toy data generation, CSV
//! input and output, persisted models, reproducible experiments and fit-time
//! benchmarks.

pub mod bench;
pub mod data;
pub mod error;
pub mod experiments;
pub mod model;
pub mod parse;

pub use error::{CliError, CliResult};
pub use experiments::{run_experiment, ExperimentConfig, ExperimentId, ExperimentOutput};
pub use model::{FittedModel, Method, ModelArtifact, ModelSpec, Prediction};
