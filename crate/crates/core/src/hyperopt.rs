//! Grid search over kernel hyperparameters by negative log marginal likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpc_laplace::{BinaryDataset, GpcModel, Likelihood, NewtonOptions};
use crate::gpr::{gpr_negative_log_likelihood, Dataset, PriorMean};
use crate::kernel::{KernelParams, DEFAULT_JITTER};

/// Axes of the hyperparameter grid. `sigma_f_values` are standard deviations;
/// the kernel uses their squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub sigma_f_values: Vec<f64>,
    pub length_scale_values: Vec<f64>,
    pub noise_values: Option<Vec<f64>>,
}

impl GridSpec {
    pub fn new(sigma_f_values: Vec<f64>, length_scale_values: Vec<f64>, noise_values: Option<Vec<f64>>) -> Result<Self> {
        let spec = Self {
            sigma_f_values,
            length_scale_values,
            noise_values,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `n × n` log-spaced grid over `[low, high]` on both axes.
    pub fn log_spaced(low: f64, high: f64, n: usize) -> Result<Self> {
        let axis = log_space(low, high, n)?;
        Self::new(axis.clone(), axis, None)
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("sigma_f", Some(&self.sigma_f_values)),
            ("length_scale", Some(&self.length_scale_values)),
            ("noise", self.noise_values.as_ref()),
        ];
        for (name, axis) in axes {
            let Some(axis) = axis else { continue };
            if axis.is_empty() {
                return Err(Error::InvalidParameter(format!("{name} axis is empty")));
            }
            if let Some(v) = axis.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter(format!("{name} values must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.sigma_f_values.len() * self.length_scale_values.len() * self.noise_values.as_ref().map_or(1, Vec::len)
    }
}

/// `n` log-spaced points from `low` to `high` inclusive.
pub fn log_space(low: f64, high: f64, n: usize) -> Result<Vec<f64>> {
    if !(low > 0.0 && high >= low && n >= 1) {
        return Err(Error::InvalidParameter(format!(
            "log grid needs 0 < low <= high and n >= 1, got [{low}, {high}] with {n}"
        )));
    }
    if n == 1 {
        return Ok(vec![low]);
    }
    let (a, b) = (low.ln(), high.ln());
    Ok((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    GprNll,
    GpcBernoulliNll,
    GpcCbNll,
}

/// Targets for a grid search.
#[derive(Debug, Clone, Copy)]
pub enum GridData<'a> {
    Regression(&'a Dataset),
    Classification(&'a BinaryDataset),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub sigma_f: f64,
    pub length_scale: f64,
    pub noise: Option<f64>,
    /// `+∞` when the fit failed.
    pub nll: f64,
}

impl GridCell {
    pub fn kernel_params(&self, jitter: f64) -> KernelParams {
        KernelParams {
            signal_variance: self.sigma_f * self.sigma_f,
            length_scale: self.length_scale,
            jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub objective: Objective,
    pub best: GridCell,
    /// Every cell, σ_f-major then l then noise, in the order of the axes.
    pub cells: Vec<GridCell>,
}

impl GridResult {
    /// Whether the best cell lies strictly inside the σ_f × l grid.
    pub fn best_is_interior(&self, spec: &GridSpec) -> bool {
        let interior = |axis: &[f64], v: f64| {
            let lo = axis.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = axis.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            v > lo && v < hi
        };
        interior(&spec.sigma_f_values, self.best.sigma_f) && interior(&spec.length_scale_values, self.best.length_scale)
    }
}

fn evaluate(data: GridData<'_>, objective: Objective, params: &KernelParams, noise: Option<f64>) -> Result<f64> {
    match (objective, data) {
        (Objective::GprNll, GridData::Regression(d)) => gpr_negative_log_likelihood(d, params, noise.unwrap_or(DEFAULT_JITTER)),
        (Objective::GpcBernoulliNll | Objective::GpcCbNll, GridData::Classification(d)) => {
            let likelihood = if objective == Objective::GpcCbNll {
                Likelihood::ContinuousBernoulli
            } else {
                Likelihood::Bernoulli
            };
            let model = GpcModel::fit(d, params, likelihood, noise.unwrap_or(0.0), PriorMean::zero(), &NewtonOptions::default())?;
            Ok(-model.marginal_loglik(&d.ys)?)
        }
        _ => Err(Error::InvalidParameter(format!("objective {objective:?} does not match the data type"))),
    }
}

/// Evaluates every cell and returns the minimizer.
///
/// Failed cells record `+∞`. Ties go to the smallest σ_f, then the smallest l,
/// then the smallest noise.
pub fn grid_search(data: GridData<'_>, grid: &GridSpec, objective: Objective) -> Result<GridResult> {
    grid.validate()?;
    // reject a mismatched objective up front rather than as a grid of failures
    match (objective, data) {
        (Objective::GprNll, GridData::Regression(_)) => {}
        (Objective::GpcBernoulliNll | Objective::GpcCbNll, GridData::Classification(_)) => {}
        _ => {
            return Err(Error::InvalidParameter(format!(
                "objective {objective:?} does not match the data type"
            )))
        }
    }
    let noises: Vec<Option<f64>> = match &grid.noise_values {
        Some(v) => v.iter().map(|&n| Some(n)).collect(),
        None => vec![None],
    };
    let mut cells = Vec::with_capacity(grid.cell_count());
    for &sigma_f in &grid.sigma_f_values {
        for &length_scale in &grid.length_scale_values {
            for &noise in &noises {
                let params = KernelParams {
                    signal_variance: sigma_f * sigma_f,
                    length_scale,
                    jitter: DEFAULT_JITTER,
                };
                let nll = match evaluate(data, objective, &params, noise) {
                    Ok(v) if v.is_finite() => v,
                    _ => f64::INFINITY,
                };
                cells.push(GridCell {
                    sigma_f,
                    length_scale,
                    noise,
                    nll,
                });
            }
        }
    }
    let key = |c: &GridCell| (c.nll, c.sigma_f, c.length_scale, c.noise.unwrap_or(0.0));
    let best = cells
        .iter()
        .filter(|c| c.nll.is_finite())
        .min_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.total_cmp(&kb.2))
                .then(ka.3.total_cmp(&kb.3))
        })
        .copied()
        .ok_or(Error::AllCellsFailed)?;
    Ok(GridResult { objective, best, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::points_1d;
    use nalgebra::DVector;

    fn reg_data() -> Dataset {
        Dataset::new(
            points_1d(&[0.0, 1.0, 2.0, 3.0, 4.0]),
            DVector::from_vec(vec![0.1, 0.9, 0.2, -0.7, -0.3]),
        )
        .unwrap()
    }

    #[test]
    fn single_cell_grid() {
        let spec = GridSpec::new(vec![1.0], vec![0.5], Some(vec![0.1])).unwrap();
        let r = grid_search(GridData::Regression(&reg_data()), &spec, Objective::GprNll).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.best, r.cells[0]);
    }

    #[test]
    fn cell_count_and_order() {
        let spec = GridSpec::new(vec![0.5, 1.0, 2.0], vec![0.3, 3.0], Some(vec![0.1, 0.2])).unwrap();
        let r = grid_search(GridData::Regression(&reg_data()), &spec, Objective::GprNll).unwrap();
        assert_eq!(r.cells.len(), 12);
        assert_eq!(spec.cell_count(), 12);
        assert_eq!((r.cells[0].sigma_f, r.cells[0].length_scale, r.cells[0].noise), (0.5, 0.3, Some(0.1)));
        assert_eq!((r.cells[1].sigma_f, r.cells[1].length_scale, r.cells[1].noise), (0.5, 0.3, Some(0.2)));
    }

    #[test]
    fn ties_prefer_small_sigma_then_small_length() {
        // identical axis values give identical objective values
        let spec = GridSpec::new(vec![1.0, 1.0], vec![0.7, 0.7], Some(vec![0.1])).unwrap();
        let r = grid_search(GridData::Regression(&reg_data()), &spec, Objective::GprNll).unwrap();
        assert_eq!(r.best, r.cells[0]);
    }

    #[test]
    fn mismatched_objective_is_rejected() {
        let spec = GridSpec::log_spaced(0.1, 10.0, 3).unwrap();
        assert!(grid_search(GridData::Regression(&reg_data()), &spec, Objective::GpcCbNll).is_err());
    }

    #[test]
    fn invalid_axes() {
        assert!(GridSpec::new(vec![], vec![1.0], None).is_err());
        assert!(GridSpec::new(vec![1.0], vec![-1.0], None).is_err());
        assert!(GridSpec::new(vec![1.0], vec![1.0], Some(vec![])).is_err());
        assert!(log_space(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn log_space_endpoints() {
        let v = log_space(1e-2, 1e2, 16).unwrap();
        assert_eq!(v.len(), 16);
        assert!((v[0] - 1e-2).abs() < 1e-16 && (v[15] - 1e2).abs() < 1e-12);
    }
}
