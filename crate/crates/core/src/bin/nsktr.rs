//! Command-line driver for nonnegative structured Kruskal tensor regression.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 numerical failure. Errors are printed to stderr as
//! `nsktr: error[<class>]: <message>` on a single line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use nsktr::config::{format_config, parse_config};
use nsktr::io::{read_dataset, read_model, read_tensor, write_atomic, write_dataset, write_model, ModelFile};
use nsktr::model::{linear_predictors, predict};
use nsktr::selection::{greedy_lambda_search, lambda_grid, select_rank, LambdaGrid, LambdaMask, ALL_LAMBDAS};
use nsktr::synthetic::{
    benchmark_options, generate_signal, run_suite, simulate_dataset, suite_cells, to_csv, BenchScale, SignalKind,
    MethodKind, SignalSpec, SimConfig,
};
use nsktr::{fit, FitOptions, Loss, NsktrError, Result};

/// `println!` that treats a closed stdout (e.g. `| head`) as a normal exit.
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let mut out = std::io::stdout().lock();
        if let Err(e) = writeln!(out, $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            panic!("failed writing to stdout: {e}");
        }
    }};
}

#[derive(Parser, Debug)]
#[command(name = "nsktr", version, about = "Nonnegative structured Kruskal tensor regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset from a synthetic coefficient signal.
    Simulate(SimulateArgs),
    /// Fit a model and print the fit report as JSON.
    Fit(FitArgs),
    /// Predict responses for one sample or a stack of samples.
    Predict(PredictArgs),
    /// Print the BIC curve over candidate ranks as CSV.
    SelectRank(SelectRankArgs),
    /// Greedy per-mode λ search on a train/validation split.
    Tune(TuneArgs),
    /// Run the estimation-error benchmark suite.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// gradient, floor, wave or fading-cross.
    #[arg(long)]
    signal: SignalKind,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Realized signal-to-noise ratio in dB (linear loss).
    #[arg(long, default_value_t = 20.0)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated signal dims; defaults to 32x32 (32x32x32 for the cross).
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long, default_value = "linear")]
    loss: Loss,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rank: Option<usize>,
    /// Overrides the loss recorded with the dataset.
    #[arg(long)]
    loss: Option<Loss>,
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Model file.
    #[arg(long)]
    model: PathBuf,
    /// Tensor file holding one sample, or samples stacked along an extra last mode.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug)]
struct SelectRankArgs {
    #[arg(long)]
    data: PathBuf,
    /// Candidate ranks: `a..b` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "1..5")]
    ranks: String,
    /// Random restarts per rank.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long)]
    loss: Option<Loss>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TuneArgs {
    #[arg(long)]
    data: PathBuf,
    /// Largest grid value: `auto` for the sample count, or a number.
    #[arg(long, default_value = "auto")]
    grid_l0: String,
    #[arg(long, default_value_t = 1e-3)]
    grid_eps: f64,
    #[arg(long, default_value_t = 5)]
    grid_steps: usize,
    /// Restrict the search to one benchmark method's penalties (LS, EN, nEN, FL, nFL).
    #[arg(long)]
    method: Option<MethodKind>,
    /// Fraction of samples used for training.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    loss: Option<Loss>,
    /// Base configuration (rank, ADMM settings, nonneg flags).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Tuned configuration file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Only `table1` is available.
    #[arg(long, default_value = "table1")]
    suite: String,
    /// desk or full.
    #[arg(long, default_value = "desk")]
    scale: BenchScale,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated subset of LS, EN, nEN, FL, nFL.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodKind>>,
    /// Fill the `seconds` column (makes the CSV timing-dependent).
    #[arg(long)]
    record_timing: bool,
    /// Output directory for results.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            let mut lines = text.lines();
            let first = lines.next().unwrap_or("invalid arguments");
            eprintln!("nsktr: error[usage]: {}", first.trim_start_matches("error: "));
            for line in lines {
                eprintln!("{line}");
            }
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            eprintln!("nsktr: error[{}]: {}", kind.tag(), e.to_string().replace('\n', " "));
            ExitCode::from(kind.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::SelectRank(a) => select_rank_cmd(a),
        Command::Tune(a) => tune(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = match a.dims {
        Some(dims) => SignalSpec::new(a.signal, dims),
        None => match a.signal {
            SignalKind::FadingCross => SignalSpec::new(a.signal, vec![32; 3]),
            _ => SignalSpec::desk(a.signal),
        },
    };
    let truth = generate_signal(&spec)?;
    let cfg = SimConfig {
        n: a.n,
        snr_db: a.snr,
        seed: a.seed,
    };
    let data = simulate_dataset(&cfg, &truth, a.loss)?;
    let source = json!({
        "signal": spec.kind.name(),
        "snr_db": if a.loss == Loss::Linear { json!(a.snr) } else { json!(null) },
        "seed": a.seed,
    });
    write_dataset(&a.out, &data, Some(&truth), source)
}

fn load_options(config: Option<&Path>) -> Result<FitOptions> {
    match config {
        Some(p) => parse_config(p),
        None => Ok(FitOptions::default()),
    }
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let loaded = read_dataset(&a.data, a.loss)?;
    let mut opts = load_options(a.config.as_deref())?;
    if let Some(r) = a.rank {
        opts.rank = r;
    }
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    let report = fit(&loaded.data, &opts)?;
    write_model(&a.out, &ModelFile::from_report(&report, opts.seed))?;
    let eta = linear_predictors(&loaded.data, &report.model)?;
    let fitted: Vec<f64> = eta
        .iter()
        .map(|&e| match report.loss {
            Loss::Linear => e,
            Loss::Logistic => nsktr::loss::sigmoid(e),
        })
        .collect();
    let out = json!({
        "rank": report.model.rank(),
        "dims": report.model.dims(),
        "loss": report.loss,
        "modes": report.modes,
        "seed": opts.seed,
        "iterations": report.iterations(),
        "converged": report.converged,
        "stop_reason": report.stop_reason,
        "final_objective": report.final_objective(),
        "objective_trace": report.objective_trace,
        "admm_iterations": report.subproblem_stats.iter().map(|s| s.iters).collect::<Vec<_>>(),
        "elapsed_seconds": report.elapsed,
        "fitted": fitted,
    });
    emit!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let m = read_model(&a.model)?;
    let t = read_tensor(&a.input)?;
    let dims = m.model.dims();
    let samples = if t.dims() == dims.as_slice() {
        vec![t]
    } else if t.dims().len() == dims.len() + 1 && t.dims()[..dims.len()] == dims[..] {
        nsktr::io::unstack_samples(t)?
    } else {
        return Err(NsktrError::ShapeMismatch(format!(
            "input dims {:?} do not match model dims {dims:?}",
            t.dims()
        )));
    };
    for x in &samples {
        emit!("{}", predict(&m.model, x, m.meta.loss)?);
    }
    Ok(())
}

fn parse_ranks(s: &str) -> Result<Vec<usize>> {
    let bad = || NsktrError::Usage(format!("cannot parse ranks `{s}` (use a..b or a,b,c)"));
    let ranks: Vec<usize> = if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        (lo..=hi).collect()
    } else {
        s.split(',').map(|r| r.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(bad());
    }
    Ok(ranks)
}

fn select_rank_cmd(a: SelectRankArgs) -> Result<()> {
    let loaded = read_dataset(&a.data, a.loss)?;
    let mut opts = load_options(a.config.as_deref())?;
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    let ranks = parse_ranks(&a.ranks)?;
    let (best, curve) = select_rank(&loaded.data, &ranks, &opts, a.reps)?;
    emit!("rank,bic,log_likelihood,effective_params,sigma2_hat,selected");
    for r in &curve {
        let sigma = r.sigma2_hat.map(|s| s.to_string()).unwrap_or_default();
        emit!("{},{},{},{},{},{}", r.rank, r.bic, r.log_likelihood, r.p_e, sigma, u8::from(r.rank == best));
    }
    Ok(())
}

fn tune(a: TuneArgs) -> Result<()> {
    let loaded = read_dataset(&a.data, a.loss)?;
    let mut opts = load_options(a.config.as_deref())?;
    if let Some(r) = a.rank {
        opts.rank = r;
    }
    if let Some(s) = a.seed {
        opts.seed = s;
    }
    let data = &loaded.data;
    let grid: LambdaGrid = match a.grid_l0.as_str() {
        "auto" => lambda_grid(data.len() as f64, a.grid_eps, a.grid_steps)?,
        v => {
            let l0: f64 = v
                .parse()
                .map_err(|_| NsktrError::Usage(format!("--grid-l0 expects `auto` or a number, got `{v}`")))?;
            lambda_grid(l0, a.grid_eps, a.grid_steps)?
        }
    };
    let mask: LambdaMask = match a.method {
        Some(m) => {
            let ndims = data.ndims();
            opts.per_mode = opts
                .resolved_modes(ndims)?
                .into_iter()
                .map(|c| c.with_nonneg(m.nonneg()))
                .collect();
            m.mask()
        }
        None => ALL_LAMBDAS,
    };
    let (train, validation) = data.split(a.train_fraction, opts.seed)?;
    let res = greedy_lambda_search(&train, &validation, &opts, &grid, mask)?;
    for s in &res.steps {
        log::info!("mode {} λ{} = {} (validation loss {})", s.mode + 1, s.coordinate + 1, s.lambda, s.validation_loss);
    }
    let tuned = FitOptions {
        per_mode: res.configs,
        ..opts
    };
    write_atomic(&a.out, format_config(&tuned).as_bytes())
}

fn benchmark(a: BenchmarkArgs) -> Result<()> {
    if a.suite != "table1" {
        return Err(NsktrError::Usage(format!("unknown suite `{}` (expected table1)", a.suite)));
    }
    let methods = a.methods.unwrap_or_else(|| MethodKind::ALL.to_vec());
    let cells = suite_cells(a.scale);
    let results = run_suite(&cells, &methods, &benchmark_options(), a.seed)?;
    let rows: Vec<_> = results.iter().flat_map(|c| c.rows.iter().cloned()).collect();
    std::fs::create_dir_all(&a.out).map_err(|e| NsktrError::Io {
        path: a.out.clone(),
        source: e,
    })?;
    write_atomic(&a.out.join("results.csv"), to_csv(&rows, a.record_timing).as_bytes())?;
    let summary = json!({
        "suite": a.suite,
        "scale": a.scale,
        "seed": a.seed,
        "cells": results.iter().map(|c| json!({
            "cell": c.cell,
            "tuned": c.tuned,
            "summary": c.summary,
            "non_monotone_fits": c.rows.iter().filter(|r| !r.monotone).count()
                + c.tuned.iter().map(|t| t.non_monotone).sum::<usize>(),
        })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_atomic(&a.out.join("summary.json"), format!("{text}\n").as_bytes())?;
    for c in &results {
        for s in &c.summary {
            eprintln!("{:<13} {:<4} {}", s.signal, s.method, s.formatted);
        }
    }
    Ok(())
}
