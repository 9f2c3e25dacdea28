//! Synthetic toy datasets and the CSV formats used for input and output.
//!
//! Data files have a header `x1,...,xd,y` and one sample per row. Every double
//! written by this crate uses 17 significant digits in scientific notation, so
//! files are locale independent and parse back to the same bits.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use gpdistill::gpr_distill::linspace;
use gpdistill::numeric::sigmoid;
use gpdistill::{BinaryDataset, Dataset};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Number of equidistant training inputs of the regression toy.
pub const REGRESSION_TOY_SIZE: usize = 10;
pub const REGRESSION_TOY_RANGE: (f64, f64) = (0.0, 10.0);
pub const CLASSIFICATION_TOY_RANGE: (f64, f64) = (0.0, 5.0);

/// Seeded generator shared by every randomized routine in the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `g(z) = z sin z`.
pub fn regression_truth(z: f64) -> f64 {
    z * z.sin()
}

/// `g(x) = 2 sin(πx/2)`.
pub fn classification_latent(x: f64) -> f64 {
    2.0 * (x * std::f64::consts::FRAC_PI_2).sin()
}

/// Label probability `σ(g(x))` of the classification toy.
pub fn classification_probability(x: f64) -> f64 {
    sigmoid(classification_latent(x))
}

/// Description of a generated dataset, recorded in experiment manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorInfo {
    pub generator: &'static str,
    pub seed: u64,
    pub n: usize,
    pub x_range: (f64, f64),
    pub truth: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_link: Option<&'static str>,
}

/// Ten equidistant inputs on `[0, 10]` with `y = x sin x + ε`, `ε ~ N(0, 1)`.
pub fn gen_regression_toy(seed: u64, noiseless: bool) -> Dataset {
    let (lo, hi) = REGRESSION_TOY_RANGE;
    let xs = linspace(lo, hi, REGRESSION_TOY_SIZE);
    let mut rng = rng(seed);
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let eps: f64 = rng.sample(StandardNormal);
            regression_truth(x) + if noiseless { 0.0 } else { eps }
        })
        .collect();
    Dataset::new(DMatrix::from_column_slice(xs.len(), 1, &xs), DVector::from_vec(ys))
        .expect("toy regression data is well formed")
}

pub fn regression_toy_info(seed: u64, noiseless: bool) -> GeneratorInfo {
    GeneratorInfo {
        generator: "regression_toy",
        seed,
        n: REGRESSION_TOY_SIZE,
        x_range: REGRESSION_TOY_RANGE,
        truth: "x*sin(x)",
        noise_std: Some(if noiseless { 0.0 } else { 1.0 }),
        label_link: None,
    }
}

/// Draws one toy label at `x` from `Bernoulli(σ(2 sin(πx/2)))`.
pub fn sample_classification_label<R: Rng>(rng: &mut R, x: f64) -> f64 {
    let u: f64 = rng.random();
    if u < classification_probability(x) {
        1.0
    } else {
        0.0
    }
}

/// `n` inputs drawn from `U(0, 5)` with labels `y ~ Bernoulli(σ(2 sin(πx/2)))`.
pub fn gen_classification_toy(seed: u64, n: usize) -> CliResult<BinaryDataset> {
    if n == 0 {
        return Err(CliError::Usage("the classification toy needs at least one sample".into()));
    }
    let (lo, hi) = CLASSIFICATION_TOY_RANGE;
    let mut rng = rng(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random_range(lo..hi);
        xs.push(x);
        ys.push(sample_classification_label(&mut rng, x));
    }
    Ok(BinaryDataset::new(DMatrix::from_column_slice(n, 1, &xs), DVector::from_vec(ys))?)
}

pub fn classification_toy_info(seed: u64, n: usize) -> GeneratorInfo {
    GeneratorInfo {
        generator: "classification_toy",
        seed,
        n,
        x_range: CLASSIFICATION_TOY_RANGE,
        truth: "2*sin(pi*x/2)",
        noise_std: None,
        label_link: Some("sigmoid"),
    }
}

/// `n` equidistant points on `[lo, hi]` as an `n × 1` input matrix.
pub fn grid_1d(lo: f64, hi: f64, n: usize) -> DMatrix<f64> {
    let xs = linspace(lo, hi, n);
    DMatrix::from_column_slice(xs.len(), 1, &xs)
}

/// Formats a double with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV file with a header row and numeric or label columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let file = File::create(path).map_err(CliError::io(path))?;
        let mut w = csv::Writer::from_writer(file);
        let to_err = |e: csv::Error| CliError::parse(path, e);
        w.write_record(&self.header).map_err(to_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(to_err)?;
        }
        w.flush().map_err(CliError::io(path))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let file = File::open(path).map_err(CliError::io(path))?;
        let mut r = csv::Reader::from_reader(file);
        let header = r
            .headers()
            .map_err(|e| CliError::parse(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .map_err(|e| CliError::parse(path, e))?;
        Ok(Self { header, rows })
    }

    /// Index of the named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn samples_header(d: usize, with_y: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    if with_y {
        h.push("y".into());
    }
    h
}

/// Writes `xs` (and `ys` if given) in the `x1,...,xd,y` format.
pub fn write_samples(path: &Path, xs: &DMatrix<f64>, ys: Option<&DVector<f64>>) -> CliResult<()> {
    let mut table = Table::new(&samples_header(xs.ncols(), ys.is_some()));
    for i in 0..xs.nrows() {
        let mut row: Vec<String> = xs.row(i).iter().map(|&v| fmt_f64(v)).collect();
        if let Some(ys) = ys {
            row.push(fmt_f64(ys[i]));
        }
        table.push(row);
    }
    table.write(path)
}

fn parse_cell(path: &Path, line: usize, cell: &str) -> CliResult<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| CliError::parse(path, format!("row {line}: `{cell}` is not a number")))
}

/// Reads a `x1,...,xd[,y]` file. Returns the inputs and, if present, the targets.
pub fn read_samples(path: &Path) -> CliResult<(DMatrix<f64>, Option<DVector<f64>>)> {
    let table = Table::read(path)?;
    let has_y = table.header.last().is_some_and(|h| h.trim() == "y");
    let d = table.header.len() - usize::from(has_y);
    if d == 0 {
        return Err(CliError::parse(path, "expected at least one input column"));
    }
    for (i, h) in table.header[..d].iter().enumerate() {
        if h.trim() != format!("x{}", i + 1) {
            return Err(CliError::parse(
                path,
                format!("header column {} is `{h}`, expected `x{}`", i + 1, i + 1),
            ));
        }
    }
    if table.rows.is_empty() {
        return Err(CliError::parse(path, "no data rows"));
    }
    let n = table.rows.len();
    let mut xs = DMatrix::zeros(n, d);
    let mut ys = DVector::zeros(n);
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            return Err(CliError::parse(path, format!("row {} has {} fields", i + 1, row.len())));
        }
        for j in 0..d {
            xs[(i, j)] = parse_cell(path, i + 1, &row[j])?;
        }
        if has_y {
            ys[i] = parse_cell(path, i + 1, &row[d])?;
        }
    }
    Ok((xs, has_y.then_some(ys)))
}

fn read_labeled(path: &Path) -> CliResult<(DMatrix<f64>, DVector<f64>)> {
    match read_samples(path)? {
        (xs, Some(ys)) => Ok((xs, ys)),
        _ => Err(CliError::parse(path, "missing `y` column")),
    }
}

pub fn read_regression(path: &Path) -> CliResult<Dataset> {
    let (xs, ys) = read_labeled(path)?;
    Ok(Dataset::new(xs, ys)?)
}

/// Reads a classification file; targets must lie in `[0, 1]`.
pub fn read_classification(path: &Path) -> CliResult<BinaryDataset> {
    let (xs, ys) = read_labeled(path)?;
    Ok(BinaryDataset::new(xs, ys)?)
}

/// Writes `value` as pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::parse(path, e))?;
    text.push('\n');
    let mut file = File::create(path).map_err(CliError::io(path))?;
    file.write_all(text.as_bytes()).map_err(CliError::io(path))
}
