//! Fit-time scaling with the number of distillation steps.
//!
//! Each method's fit time is divided by the time of an ordinary single fit of
//! the same model class, measured in the same repetition, so slow drift of the
//! machine cancels out.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::time::{Duration, Instant};

use gpdistill::gpc_distill::{data_centric_gpc, distribution_centric_gpc_scaled, GpcDistillConfig};
use gpdistill::gpr::fit_gpr;
use gpdistill::gpr_distill::{distribution_centric_model, linspace};
use gpdistill::{
    BinaryDataset, DataCentricGpr, DataCentricPath, Dataset, DistillSchedule, GpcModel, KernelParams, Likelihood,
    NewtonOptions, PriorMean,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use serde_json::{json, Value};

use crate::data::{fmt_f64, gen_classification_toy, regression_truth, rng, Table};
use crate::error::{CliError, CliResult};

/// Methods timed against an ordinary fit.
pub const METHODS: [&str; 5] = ["gpr-data-naive", "gpr-data-spectral", "gpr-dist", "gpc-data", "gpc-dist"];

/// `(σ_f², l)` of the unit kernel used for both model classes.
pub const BENCH_KERNEL: (f64, f64) = (1.0, 1.0);

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub steps: Vec<usize>,
    pub repetitions: usize,
    /// Training set size for both model classes.
    pub n: usize,
    pub seed: u64,
    /// Every measurement repeats the fit until the ordinary baseline would
    /// have taken at least this long.
    pub min_batch: Duration,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            steps: vec![1, 5, 10, 20],
            repetitions: 30,
            n: 50,
            seed: 1,
            min_batch: Duration::from_millis(2),
        }
    }
}

impl BenchConfig {
    pub fn manifest(&self) -> Value {
        json!({
            "steps": self.steps,
            "repetitions": self.repetitions,
            "n": self.n,
            "seed": self.seed,
            "min_batch_seconds": self.min_batch.as_secs_f64(),
            "methods": METHODS,
            "regression_schedule": "linspace(0.1, 1, steps)",
            "kernel": { "signal_variance": BENCH_KERNEL.0, "length_scale": BENCH_KERNEL.1 },
            "baseline": "one ordinary fit of the same model class",
            "quantiles": [0.1, 0.9],
        })
    }
}

/// Summary statistics for one method and step count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: String,
    pub steps: usize,
    pub mean: f64,
    pub q10: f64,
    pub q90: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    /// `(method, steps, repetition, relative time)`.
    pub raw: Vec<(String, usize, usize, f64)>,
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

impl TimingReport {
    pub fn rows_for(&self, method: &str) -> Vec<&TimingRow> {
        self.rows.iter().filter(|r| r.method == method).collect()
    }

    /// Slope of the mean relative time per additional step, per method.
    pub fn slopes(&self) -> BTreeMap<String, f64> {
        METHODS
            .iter()
            .map(|m| {
                let rows = self.rows_for(m);
                let x: Vec<f64> = rows.iter().map(|r| r.steps as f64).collect();
                let y: Vec<f64> = rows.iter().map(|r| r.mean).collect();
                (m.to_string(), slope(&x, &y))
            })
            .collect()
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&["method", "steps", "mean", "q10", "q90"]);
        for r in &self.rows {
            t.push(vec![r.method.clone(), r.steps.to_string(), fmt_f64(r.mean), fmt_f64(r.q10), fmt_f64(r.q90)]);
        }
        t
    }

    pub fn raw_table(&self) -> Table {
        let mut t = Table::new(&["method", "steps", "repetition", "relative_time"]);
        for (m, s, r, v) in &self.raw {
            t.push(vec![m.clone(), s.to_string(), r.to_string(), fmt_f64(*v)]);
        }
        t
    }
}

struct Problem {
    reg: Dataset,
    reg_params: KernelParams,
    cls: BinaryDataset,
    cls_params: KernelParams,
    newton: NewtonOptions,
}

impl Problem {
    fn new(config: &BenchConfig) -> CliResult<Self> {
        let mut r = rng(config.seed);
        let xs = linspace(0.0, 10.0, config.n);
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| regression_truth(x) + r.sample::<f64, _>(StandardNormal))
            .collect();
        let reg = Dataset::new(DMatrix::from_column_slice(xs.len(), 1, &xs), DVector::from_vec(ys))?;
        Ok(Self {
            reg,
            reg_params: KernelParams::rbf(BENCH_KERNEL.0, BENCH_KERNEL.1)?,
            cls: gen_classification_toy(config.seed, config.n)?,
            cls_params: KernelParams::rbf(BENCH_KERNEL.0, BENCH_KERNEL.1)?,
            newton: NewtonOptions::default(),
        })
    }

    fn baseline(&self, classification: bool) -> gpdistill::Result<()> {
        if classification {
            black_box(GpcModel::fit(&self.cls, &self.cls_params, Likelihood::Bernoulli, 0.0, PriorMean::zero(), &self.newton)?);
        } else {
            black_box(fit_gpr(&self.reg, &self.reg_params, 0.1, PriorMean::zero())?);
        }
        Ok(())
    }

    fn run(&self, method: &str, steps: usize) -> gpdistill::Result<()> {
        let schedule = || DistillSchedule::linspace(0.1, 1.0, steps);
        match method {
            "gpr-data-naive" => {
                black_box(DataCentricGpr::fit(&self.reg, &self.reg_params, &schedule()?, DataCentricPath::Naive)?.targets(steps)?);
            }
            "gpr-data-spectral" => {
                black_box(DataCentricGpr::fit(&self.reg, &self.reg_params, &schedule()?, DataCentricPath::Spectral)?.targets(steps)?);
            }
            "gpr-dist" => {
                black_box(distribution_centric_model(&self.reg, &self.reg_params, &schedule()?, steps)?);
            }
            "gpc-data" => {
                let config = GpcDistillConfig {
                    newton: self.newton,
                    ..GpcDistillConfig::with_steps(steps)
                };
                black_box(data_centric_gpc(&self.cls, &self.cls_params, &config)?);
            }
            "gpc-dist" => {
                black_box(distribution_centric_gpc_scaled(&self.cls, &self.cls_params, steps, &self.newton)?);
            }
            other => unreachable!("unknown bench method {other}"),
        }
        Ok(())
    }
}

fn is_classification(method: &str) -> bool {
    method.starts_with("gpc")
}

fn timed(batch: usize, mut f: impl FnMut() -> gpdistill::Result<()>) -> gpdistill::Result<f64> {
    let start = Instant::now();
    for _ in 0..batch {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / batch as f64)
}

/// Measures fit time relative to an ordinary fit for every method and step count.
pub fn bench_fit_scaling(config: &BenchConfig) -> CliResult<TimingReport> {
    if config.steps.is_empty() || config.steps.contains(&0) {
        return Err(CliError::Usage("bench steps must be a non-empty list of positive counts".into()));
    }
    if config.repetitions == 0 || config.n == 0 {
        return Err(CliError::Usage("bench needs at least one repetition and one sample".into()));
    }
    let problem = Problem::new(config)?;
    // warm up, then size batches so that the baseline spans `min_batch`
    let mut batch = [1usize; 2];
    for (i, classification) in [false, true].into_iter().enumerate() {
        timed(3, || problem.baseline(classification))?;
        let single = timed(3, || problem.baseline(classification))?;
        batch[i] = ((config.min_batch.as_secs_f64() / single.max(1e-9)).ceil() as usize).clamp(1, 10_000);
    }
    let mut samples: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut raw = Vec::new();
    for rep in 0..config.repetitions {
        let base = [
            timed(batch[0], || problem.baseline(false))?,
            timed(batch[1], || problem.baseline(true))?,
        ];
        for (mi, method) in METHODS.iter().enumerate() {
            let c = usize::from(is_classification(method));
            for &steps in &config.steps {
                let rel = timed(batch[c], || problem.run(method, steps))? / base[c];
                samples.entry((mi, steps)).or_default().push(rel);
                raw.push((method.to_string(), steps, rep, rel));
            }
        }
    }
    let rows = samples
        .into_iter()
        .map(|((mi, steps), v)| TimingRow {
            method: METHODS[mi].to_string(),
            steps,
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q10: quantile(&v, 0.1),
            q90: quantile(&v, 0.9),
        })
        .collect();
    Ok(TimingReport { rows, raw })
}
