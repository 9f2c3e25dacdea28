use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gpdistill::gpc_distill::TargetKind;
use gpdistill::hyperopt::{grid_search, log_space, GridData, GridSpec, Objective};
use gpdistill::kernel::DEFAULT_JITTER;
use gpdistill::{KernelParams, Likelihood, ProbabilityMethod};
use gpdistill_cli::bench::{bench_fit_scaling, BenchConfig};
use gpdistill_cli::data::{
    fmt_f64, gen_classification_toy, gen_regression_toy, grid_1d, read_classification, read_regression,
    read_samples, write_samples, Table,
};
use gpdistill_cli::experiments::{prediction_header, push_predictions, GridSettings};
use gpdistill_cli::model::{NewtonSettings, PathKind, TrainingData};
use gpdistill_cli::parse::{parse_counts, parse_grid, parse_list, parse_range, parse_schedule};
use gpdistill_cli::{run_experiment, CliError, CliResult, ExperimentConfig, ExperimentId, Method, ModelArtifact, ModelSpec};

#[derive(Parser)]
#[command(name = "gpdistill", version, about = "Self-distillation for Gaussian process regression and classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an ordinary GP regressor or classifier and save it.
    Fit(FitArgs),
    /// Run a distillation method and save the fitted chain.
    Distill(DistillArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Evaluate the negative log marginal likelihood over a hyperparameter grid.
    GridSearch(GridArgs),
    /// Run one of the built-in experiments.
    Reproduce(ReproduceArgs),
    /// Measure fit time against the number of distillation steps.
    Bench(BenchArgs),
    /// Write a synthetic toy dataset.
    GenData(GenArgs),
}

#[derive(Args)]
struct KernelArgs {
    /// Kernel amplitude σ_f (the kernel uses σ_f²).
    #[arg(long, default_value_t = 1.0)]
    sigma_f: f64,
    /// Length scale l in exp(-‖x-x'‖² / (2l)).
    #[arg(long, default_value_t = 1.0)]
    length_scale: f64,
    #[arg(long, default_value_t = DEFAULT_JITTER)]
    jitter: f64,
    /// Newton iteration cap for classification fits.
    #[arg(long, default_value_t = NewtonSettings::default().max_iters)]
    newton_max_iters: usize,
}

impl KernelArgs {
    fn params(&self) -> CliResult<KernelParams> {
        Ok(KernelParams::new(self.sigma_f * self.sigma_f, self.length_scale, self.jitter)?)
    }

    fn newton(&self) -> NewtonSettings {
        NewtonSettings {
            max_iters: self.newton_max_iters,
            ..NewtonSettings::default()
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OrdinaryMethod {
    Gpr,
    Gpc,
}

#[derive(Clone, Copy, ValueEnum)]
enum LikelihoodArg {
    Bernoulli,
    ContinuousBernoulli,
}

impl From<LikelihoodArg> for Likelihood {
    fn from(l: LikelihoodArg) -> Self {
        match l {
            LikelihoodArg::Bernoulli => Likelihood::Bernoulli,
            LikelihoodArg::ContinuousBernoulli => Likelihood::ContinuousBernoulli,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetKindArg {
    SoftMean,
    LatentSigmoid,
    HardThreshold,
}

impl From<TargetKindArg> for TargetKind {
    fn from(t: TargetKindArg) -> Self {
        match t {
            TargetKindArg::SoftMean => TargetKind::SoftMean,
            TargetKindArg::LatentSigmoid => TargetKind::LatentSigmoid,
            TargetKindArg::HardThreshold => TargetKind::HardThreshold,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbabilityArg {
    Quadrature,
    LatentMean,
}

impl From<ProbabilityArg> for ProbabilityMethod {
    fn from(p: ProbabilityArg) -> Self {
        match p {
            ProbabilityArg::Quadrature => ProbabilityMethod::Quadrature,
            ProbabilityArg::LatentMean => ProbabilityMethod::LatentMean,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: OrdinaryMethod,
    /// Training data in `x1,...,xd,y` format.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Observation noise (regression) or extra Gram diagonal (classification).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum, default_value = "bernoulli")]
    likelihood: LikelihoodArg,
    /// Where to write the model artifact.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    /// One of gpr-data, gpr-dist, gpc-data, gpc-dist.
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Noise schedule for regression: `g1,g2,...` or `linspace:first:last:n`.
    #[arg(long)]
    schedule: Option<String>,
    /// Number of steps (classification, or to truncate a schedule).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum, default_value = "spectral")]
    path: PathKind,
    #[arg(long, value_enum, default_value = "soft-mean")]
    target_kind: TargetKindArg,
    /// Likelihood for distilled classification steps.
    #[arg(long, value_enum, default_value = "continuous-bernoulli")]
    likelihood: LikelihoodArg,
    /// Per-step extra Gram diagonal for data-centric classification.
    #[arg(long)]
    reg_gammas: Option<String>,
    /// Use one fit under the t·k prior per step instead of iterating.
    #[arg(long)]
    scaled: bool,
    #[arg(long)]
    out: PathBuf,
    /// Also write per-step predictions on `low:high:n` to this CSV file.
    #[arg(long, requires = "grid")]
    predictions: Option<PathBuf>,
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    /// Saved model artifact.
    #[arg(long)]
    model: PathBuf,
    /// Test inputs in `x1,...,xd` format (a `y` column is ignored).
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    inputs: Option<PathBuf>,
    /// One-dimensional test grid `low:high:n`.
    #[arg(long)]
    grid: Option<String>,
    /// Step to predict with; defaults to the last.
    #[arg(long)]
    step: Option<usize>,
    /// Predict with every step.
    #[arg(long, conflicts_with = "step")]
    all_steps: bool,
    #[arg(long, value_enum, default_value = "quadrature")]
    probability: ProbabilityArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    GprNll,
    GpcBernoulliNll,
    GpcCbNll,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    objective: ObjectiveArg,
    /// σ_f axis as `low:high`, log spaced.
    #[arg(long, default_value = "0.01:100")]
    sigma_f_range: String,
    /// Length-scale axis as `low:high`, log spaced.
    #[arg(long, default_value = "0.01:100")]
    length_scale_range: String,
    /// Points per axis.
    #[arg(long, default_value_t = 16)]
    points: usize,
    /// Optional noise axis as a comma list.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Experiment id, for example gpr-data-10step or grid-search.
    experiment: String,
    #[arg(long, default_value_t = gpdistill_cli::experiments::DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Use a CSV dataset instead of the generated toy.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Override the regression noise schedule.
    #[arg(long)]
    schedule: Option<String>,
    /// Steps for the classification experiments.
    #[arg(long, default_value_t = gpdistill_cli::experiments::DEFAULT_STEPS)]
    steps: usize,
    /// Points per axis of the selection grid.
    #[arg(long, default_value_t = 16)]
    grid_points: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "1,5,10,20")]
    steps: String,
    #[arg(long, default_value_t = 30)]
    repetitions: usize,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Regression,
    Classification,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Sample count for the classification toy.
    #[arg(long, default_value_t = 30)]
    n: usize,
    /// Regression targets without observation noise.
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    out: PathBuf,
}

fn training(path: &Path) -> CliResult<TrainingData> {
    let (xs, ys) = read_samples(path)?;
    let ys = ys.ok_or_else(|| CliError::parse(path, "missing `y` column"))?;
    Ok(TrainingData::new(path.display().to_string(), &xs, &ys))
}

fn fit(args: FitArgs) -> CliResult<()> {
    let spec = match args.method {
        OrdinaryMethod::Gpr => ModelSpec::Gpr {
            noise: args.noise.unwrap_or(DEFAULT_JITTER),
        },
        OrdinaryMethod::Gpc => ModelSpec::Gpc {
            likelihood: args.likelihood.into(),
            reg_gamma: args.noise.unwrap_or(0.0),
        },
    };
    let (artifact, _) = ModelArtifact::fit(spec, args.kernel.params()?, args.kernel.newton(), training(&args.data)?)?;
    artifact.save(&args.out)
}

fn distill(args: DistillArgs) -> CliResult<()> {
    let schedule = || -> CliResult<Vec<f64>> {
        let mut s = parse_schedule(args.schedule.as_deref().ok_or_else(|| CliError::Usage("--schedule is required for regression".into()))?)?;
        if let Some(t) = args.steps {
            if t == 0 || t > s.len() {
                return Err(CliError::Usage(format!("--steps {t} is outside the schedule of {} values", s.len())));
            }
            s.truncate(t);
        }
        Ok(s)
    };
    let steps = || args.steps.ok_or_else(|| CliError::Usage("--steps is required for classification".into()));
    let spec = match args.method {
        Method::GprData => ModelSpec::GprData {
            schedule: schedule()?,
            path: args.path,
        },
        Method::GprDist => ModelSpec::GprDist { schedule: schedule()? },
        Method::GpcData => ModelSpec::GpcData {
            steps: steps()?,
            target_kind: args.target_kind.into(),
            distilled_likelihood: args.likelihood.into(),
            reg_gammas: args.reg_gammas.as_deref().map(parse_list).transpose()?,
        },
        Method::GpcDist => ModelSpec::GpcDist {
            steps: steps()?,
            scaled: args.scaled,
        },
        Method::Gpr | Method::Gpc => {
            return Err(CliError::Usage("use `fit` for ordinary models".into()));
        }
    };
    let (artifact, model) = ModelArtifact::fit(spec, args.kernel.params()?, args.kernel.newton(), training(&args.data)?)?;
    artifact.save(&args.out)?;
    if let (Some(path), Some(grid)) = (&args.predictions, &args.grid) {
        let (lo, hi, n) = parse_grid(grid)?;
        let xs = grid_1d(lo, hi, n);
        let mut table = Table::new(&prediction_header(&["step"], 1, model.is_classification()));
        for t in 1..=model.steps() {
            let pred = model.predict(&xs, t, ProbabilityMethod::Quadrature)?;
            push_predictions(&mut table, &[t.to_string()], &xs, &pred);
        }
        table.write(path)?;
    }
    Ok(())
}

fn predict(args: PredictArgs) -> CliResult<()> {
    let artifact = ModelArtifact::load(&args.model)?;
    let model = artifact.restore()?;
    let xs = match (&args.inputs, &args.grid) {
        (Some(path), _) => read_samples(path)?.0,
        (None, Some(grid)) => {
            let (lo, hi, n) = parse_grid(grid)?;
            grid_1d(lo, hi, n)
        }
        (None, None) => unreachable!("clap requires one input source"),
    };
    let steps: Vec<usize> = if args.all_steps {
        (1..=model.steps()).collect()
    } else {
        vec![args.step.unwrap_or(model.steps())]
    };
    let mut table = Table::new(&prediction_header(&["step"], xs.ncols(), model.is_classification()));
    for t in steps {
        let pred = model.predict(&xs, t, args.probability.into())?;
        push_predictions(&mut table, &[t.to_string()], &xs, &pred);
    }
    table.write(&args.out)
}

fn grid(args: GridArgs) -> CliResult<()> {
    let (s_lo, s_hi) = parse_range(&args.sigma_f_range)?;
    let (l_lo, l_hi) = parse_range(&args.length_scale_range)?;
    let spec = GridSpec::new(
        log_space(s_lo, s_hi, args.points)?,
        log_space(l_lo, l_hi, args.points)?,
        args.noise.as_deref().map(parse_list).transpose()?,
    )?;
    let (objective, result) = match args.objective {
        ObjectiveArg::GprNll => {
            let d = read_regression(&args.data)?;
            (Objective::GprNll, grid_search(GridData::Regression(&d), &spec, Objective::GprNll))
        }
        o => {
            let objective = if matches!(o, ObjectiveArg::GpcCbNll) { Objective::GpcCbNll } else { Objective::GpcBernoulliNll };
            let d = read_classification(&args.data)?;
            (objective, grid_search(GridData::Classification(&d), &spec, objective))
        }
    };
    let result = result.inspect_err(|_| eprintln!("all {} grid cells failed", spec.cell_count()))?;
    let failed = result.cells.iter().filter(|c| !c.nll.is_finite()).count();
    if failed > 0 {
        eprintln!("{failed} of {} grid cells failed and were recorded as inf", result.cells.len());
        for c in result.cells.iter().filter(|c| !c.nll.is_finite()) {
            eprintln!("  failed cell: sigma_f={} length_scale={} noise={:?}", c.sigma_f, c.length_scale, c.noise);
        }
    }
    let default_noise = if objective == Objective::GprNll { DEFAULT_JITTER } else { 0.0 };
    let mut table = Table::new(&["sigma_f", "length_scale", "noise", "nll"]);
    for c in &result.cells {
        table.push(vec![fmt_f64(c.sigma_f), fmt_f64(c.length_scale), fmt_f64(c.noise.unwrap_or(default_noise)), fmt_f64(c.nll)]);
    }
    table.write(&args.out)?;
    println!(
        "best: sigma_f={} length_scale={} noise={} nll={}",
        result.best.sigma_f,
        result.best.length_scale,
        result.best.noise.unwrap_or(default_noise),
        result.best.nll
    );
    Ok(())
}

fn reproduce(args: ReproduceArgs) -> CliResult<()> {
    let id: ExperimentId = args.experiment.parse()?;
    let mut config = ExperimentConfig::new(id, &args.out);
    config.seed = args.seed;
    config.data = args.data;
    config.schedule = args.schedule.as_deref().map(parse_schedule).transpose()?;
    config.steps = args.steps;
    config.grid = GridSettings {
        n: args.grid_points,
        ..GridSettings::default()
    };
    config.bench.seed = args.seed;
    let output = run_experiment(&config)?;
    for f in &output.files {
        println!("{}", output.out_dir.join(f).display());
    }
    Ok(())
}

fn bench(args: BenchArgs) -> CliResult<()> {
    let config = BenchConfig {
        steps: parse_counts(&args.steps)?,
        repetitions: args.repetitions,
        n: args.n,
        seed: args.seed,
        min_batch: Duration::from_millis(2),
    };
    let report = bench_fit_scaling(&config)?;
    report.summary_table().write(&args.out)?;
    for (method, slope) in report.slopes() {
        println!("{method}: slope {slope:.4} per step");
    }
    Ok(())
}

fn gen_data(args: GenArgs) -> CliResult<()> {
    match args.kind {
        DataKind::Regression => {
            let d = gen_regression_toy(args.seed, args.noiseless);
            write_samples(&args.out, &d.xs, Some(&d.ys))
        }
        DataKind::Classification => {
            let d = gen_classification_toy(args.seed, args.n)?;
            write_samples(&args.out, &d.xs, Some(&d.ys))
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Distill(a) => distill(a),
        Command::Predict(a) => predict(a),
        Command::GridSearch(a) => grid(a),
        Command::Reproduce(a) => reproduce(a),
        Command::Bench(a) => bench(a),
        Command::GenData(a) => gen_data(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
