//! Command-line interface.
//!
//! Five subcommands cover the pipeline end to end: `gen-data` simulates the
//! supervised data set, `train` fits the collocation network, `simulate`
//! runs a sampler, `convergence` sweeps step sizes, and `bench` times the
//! sequential backend against a worker pool. A JSON `--config` file can
//! provide any value; explicit flags win over the file, which wins over
//! built-in defaults. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::ann::{load_model, save_model, train, TrainConfig};
use crate::collocation::{gauss_hermite_grid, DEFAULT_GRID_SIZE};
use crate::harness::{
    convergence_study, speedup_bench, write_error_reports_csv, BenchConfig, ConvergenceConfig,
};
use crate::models::{ou_model, ModelParams};
use crate::runtime::{timed, Backend};
use crate::scheme::{run_scheme, CollocationPredictor, SchemeConfig};
use crate::simulate::{generate_training_set, SchemeKind, TrainingGenConfig, TrainingSet};

#[derive(Parser)]
#[command(
    name = "sevenleague",
    version,
    about = "Large-time-step Monte Carlo for scalar SDEs with learned stochastic collocation"
)]
struct Cli {
    /// JSON configuration file; explicit flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a training data set (CSV plus JSON meta sidecar).
    GenData(GenDataArgs),
    /// Train the collocation network on a generated data set.
    Train(TrainArgs),
    /// Simulate paths with a chosen scheme.
    Simulate(SimulateArgs),
    /// Strong/weak error study over a grid of step sizes.
    Convergence(ConvergenceArgs),
    /// Time the sequential backend against a worker pool.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of feature rows to generate.
    #[arg(long)]
    samples: Option<usize>,
    /// Monte Carlo paths per feature row.
    #[arg(long)]
    inner_paths: Option<usize>,
    /// Fine sub-step of the label simulation.
    #[arg(long)]
    fine_step: Option<f64>,
    /// Number of collocation points per label row.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker pool size for generation (defaults to the core count).
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV path (the meta sidecar lands next to it).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Training data CSV produced by gen-data.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Output model JSON path.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scheme: 7l, 7l-cdc, euler or exact.
    #[arg(long)]
    scheme: Option<String>,
    /// Time step; must divide the horizon.
    #[arg(long)]
    dt: Option<f64>,
    /// Number of paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Backend: seq, pool or pool:K.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trained model JSON; without it the exact transition-law predictor
    /// is used.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Write the simulated paths as CSV.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Simulation horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Collocation points (ignored when --model sets the width).
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args)]
struct ConvergenceArgs {
    /// Comma-separated step sizes, e.g. 0.25,0.5,1.0,2.0.
    #[arg(long, value_delimiter = ',')]
    dts: Option<Vec<f64>>,
    /// Comma-separated schemes.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Trained model JSON for the ANN predictor.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    /// Output CSV path.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated path counts, e.g. 1000,50000.
    #[arg(long, value_delimiter = ',')]
    paths: Option<Vec<usize>>,
    /// Comma-separated schemes.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Worker pool size (defaults to the core count).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Output CSV path.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    backend: BackendSection,
    #[serde(default)]
    train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
struct ModelSection {
    ybar: Option<f64>,
    lambda: Option<f64>,
    sigma: Option<f64>,
    y0: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
struct SimSection {
    #[serde(rename = "T")]
    horizon: Option<f64>,
    n_steps: Option<usize>,
    n_paths: Option<usize>,
    scheme: Option<String>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
struct BackendSection {
    kind: Option<String>,
    workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct TrainSection {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(crate::Error),
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_main(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = load_file_config(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::GenData(args) => run_gen_data(args, &file),
        Command::Train(args) => run_train(args, &file),
        Command::Simulate(args) => run_simulate(args, &file),
        Command::Convergence(args) => run_convergence(args, &file),
        Command::Bench(args) => run_bench(args, &file),
    });
    match outcome {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_file_config(path: Option<&Path>) -> CliResult<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("malformed config {}: {e}", p.display())))
        }
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn resolve_model(file: &FileConfig) -> CliResult<(ModelParams<f64>, f64)> {
    let params = ModelParams::new(
        file.model.ybar.unwrap_or(0.0),
        file.model.lambda.unwrap_or(1.0),
        file.model.sigma.unwrap_or(0.5),
    )?;
    Ok((params, file.model.y0.unwrap_or(1.0)))
}

fn parse_backend(spec: &str, default_pool_workers: usize) -> CliResult<Backend> {
    if spec == "seq" {
        return Ok(Backend::Sequential);
    }
    if spec == "pool" {
        return Ok(Backend::pool(default_pool_workers)?);
    }
    if let Some(k) = spec.strip_prefix("pool:") {
        let workers: usize = k
            .parse()
            .map_err(|_| CliError::Usage(format!("bad worker count in --backend {spec:?}")))?;
        return Ok(Backend::pool(workers)?);
    }
    Err(CliError::Usage(format!(
        "unknown backend {spec:?} (expected seq, pool or pool:K)"
    )))
}

fn resolve_backend(flag: Option<&str>, file: &FileConfig) -> CliResult<Backend> {
    let workers = file.backend.workers.unwrap_or_else(default_workers);
    match flag {
        Some(spec) => parse_backend(spec, workers),
        None => match file.backend.kind.as_deref() {
            Some("pool") => Ok(Backend::pool(workers)?),
            Some("seq") | None => Ok(Backend::Sequential),
            Some(other) => Err(CliError::Usage(format!(
                "unknown backend kind {other:?} in config"
            ))),
        },
    }
}

fn parse_scheme(name: &str) -> CliResult<SchemeKind> {
    name.parse::<SchemeKind>()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_schemes(names: &[String]) -> CliResult<Vec<SchemeKind>> {
    names.iter().map(|s| parse_scheme(s)).collect()
}

fn run_gen_data(args: GenDataArgs, _file: &FileConfig) -> CliResult<()> {
    let defaults = TrainingGenConfig::default();
    let config = TrainingGenConfig {
        ranges: defaults.ranges,
        n_samples: args.samples.unwrap_or(defaults.n_samples),
        inner_paths: args.inner_paths.unwrap_or(defaults.inner_paths),
        fine_step: args.fine_step.unwrap_or(defaults.fine_step),
        seed: args.seed.unwrap_or(defaults.seed),
    };
    let m = args.m.unwrap_or(DEFAULT_GRID_SIZE);
    let grid = gauss_hermite_grid::<f64>(m)?;
    let backend = Backend::pool(args.workers.unwrap_or_else(default_workers))?;
    let (result, secs) = timed(|| generate_training_set(&config, &grid, &backend));
    let dataset = result?;
    dataset.write_csv(&args.out)?;
    println!(
        "generated {} samples (m={m}, inner_paths={}, fine_step={}) in {secs:.1}s -> {}",
        dataset.n_samples(),
        config.inner_paths,
        config.fine_step,
        args.out.display()
    );
    Ok(())
}

fn run_train(args: TrainArgs, file: &FileConfig) -> CliResult<()> {
    let data = args
        .data
        .or_else(|| file.train.data.clone())
        .ok_or_else(|| {
            CliError::Usage("missing --data (or train.data in the config file)".into())
        })?;
    let out = args.out.or_else(|| file.train.out.clone()).ok_or_else(|| {
        CliError::Usage("missing --out (or train.out in the config file)".into())
    })?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        epochs: args.epochs.or(file.train.epochs).unwrap_or(defaults.epochs),
        batch_size: args
            .batch_size
            .or(file.train.batch_size)
            .unwrap_or(defaults.batch_size),
        learning_rate: args.lr.or(file.train.lr).unwrap_or(defaults.learning_rate),
        seed: args.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let dataset = TrainingSet::<f64>::read_csv(&data)?;
    let (result, secs) = timed(|| train(&dataset, &config));
    let outcome = result?;
    save_model(&outcome.mlp, &outcome.normalization, &config, &out)?;
    let last = outcome.history.last().expect("at least one epoch");
    println!(
        "trained {} epochs in {secs:.1}s; best val mse {:.3e} (normalized), val rmse {:.3e} (label units) -> {}",
        outcome.history.len(),
        last.best_val_mse,
        outcome.val_rmse_label_units,
        out.display()
    );
    Ok(())
}

struct LoadedPredictor {
    mlp: Option<(crate::ann::Mlp<f64>, crate::ann::Normalization<f64>)>,
    grid: crate::collocation::CollocationGrid<f64>,
}

impl LoadedPredictor {
    fn load(model_path: Option<&Path>, m_flag: Option<usize>) -> CliResult<Self> {
        match model_path {
            Some(path) => {
                let (mlp, norm) = load_model::<f64>(path)?;
                let grid = gauss_hermite_grid::<f64>(mlp.output_dim())?;
                Ok(LoadedPredictor {
                    mlp: Some((mlp, norm)),
                    grid,
                })
            }
            None => Ok(LoadedPredictor {
                mlp: None,
                grid: gauss_hermite_grid::<f64>(m_flag.unwrap_or(DEFAULT_GRID_SIZE))?,
            }),
        }
    }

    fn predictor(&self) -> CliResult<CollocationPredictor<'_, f64>> {
        match &self.mlp {
            Some((mlp, norm)) => Ok(CollocationPredictor::ann(mlp, norm, &self.grid)?),
            None => Ok(CollocationPredictor::exact_ou(&self.grid)),
        }
    }
}

fn run_simulate(args: SimulateArgs, file: &FileConfig) -> CliResult<()> {
    let (params, y0) = resolve_model(file)?;
    let horizon = args.horizon.or(file.sim.horizon).unwrap_or(2.0);
    let n_steps = match args.dt {
        Some(dt) => super::steps_for(horizon, dt)
            .map_err(|e| CliError::Usage(e.to_string()))?,
        None => file.sim.n_steps.unwrap_or(4),
    };
    let n_paths = args.paths.or(file.sim.n_paths).unwrap_or(10_000);
    let scheme_name = args
        .scheme
        .or_else(|| file.sim.scheme.clone())
        .unwrap_or_else(|| "7l".to_string());
    let scheme = parse_scheme(&scheme_name)?;
    let seed = args.seed.or(file.sim.seed).unwrap_or(1);
    let backend = resolve_backend(args.backend.as_deref(), file)?;
    let loaded = LoadedPredictor::load(args.model.as_deref(), args.m)?;
    let predictor = loaded.predictor()?;

    let model = ou_model(y0);
    let cfg = SchemeConfig::new(horizon, n_steps, n_paths, scheme, seed);
    let (result, secs) = timed(|| run_scheme(&model, &params, Some(&predictor), &cfg, &backend));
    let paths = result?;
    let stats = paths.stats();
    println!(
        "scheme={scheme} paths={n_paths} steps={n_steps} dt={} backend={} seconds={secs:.3}",
        horizon / n_steps as f64,
        backend.describe()
    );
    println!(
        "predictor: {} calls, {} rows; sort repairs {}; draws outside node range {}",
        stats.predictor_invocations,
        stats.predictor_rows,
        stats.sort_repairs,
        stats.draws_outside_node_hull
    );
    if let Some(out) = args.out {
        paths.write_csv(&out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run_convergence(args: ConvergenceArgs, file: &FileConfig) -> CliResult<()> {
    let (params, y0) = resolve_model(file)?;
    let horizon = args.horizon.or(file.sim.horizon).unwrap_or(2.0);
    let schemes = match &args.schemes {
        Some(names) => parse_schemes(names)?,
        None => vec![SchemeKind::SevenLeague, SchemeKind::Euler],
    };
    let config = ConvergenceConfig {
        horizon,
        dt_values: args.dts.unwrap_or_else(|| vec![0.25, 0.5, 1.0, 2.0]),
        schemes,
        n_paths: args.paths.or(file.sim.n_paths).unwrap_or(10_000),
        seed: args.seed.or(file.sim.seed).unwrap_or(1),
    };
    let backend = resolve_backend(None, file)?;
    let loaded = LoadedPredictor::load(args.model.as_deref(), args.m)?;
    let predictor = loaded.predictor()?;
    let model = ou_model(y0);
    let reports = convergence_study(&model, &params, Some(&predictor), &config, &backend)?;
    println!("dt        scheme   strong_error  weak_error");
    for r in &reports {
        println!(
            "{:<9} {:<8} {:<13.4e} {:.4e}",
            r.dt, r.scheme, r.strong_error, r.weak_error
        );
    }
    if let Some(out) = args.out {
        write_error_reports_csv(&reports, &out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run_bench(args: BenchArgs, file: &FileConfig) -> CliResult<()> {
    let (params, y0) = resolve_model(file)?;
    let defaults = BenchConfig::default();
    let schemes = match &args.schemes {
        Some(names) => parse_schemes(names)?,
        None => defaults.schemes.clone(),
    };
    let config = BenchConfig {
        path_counts: args.paths.unwrap_or(defaults.path_counts),
        schemes,
        horizon: args.horizon.unwrap_or(defaults.horizon),
        n_steps: args.steps.unwrap_or(defaults.n_steps),
        repeats: args.repeats.unwrap_or(defaults.repeats),
        workers: args
            .workers
            .or(file.backend.workers)
            .unwrap_or_else(default_workers),
        seed: args.seed.or(file.sim.seed).unwrap_or(defaults.seed),
    };
    let loaded = LoadedPredictor::load(None, None)?;
    let predictor = loaded.predictor()?;
    let model = ou_model(y0);
    let report = speedup_bench(&model, &params, Some(&predictor), &config)?;
    print!("{}", report.render());
    if let Some(out) = args.out {
        report.write_csv(&out)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
