//! `chaoscast` — command-line driver for hybrid forecast experiments.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 when `--strict`
//! is set and at least one replica failed at runtime.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chaoscast_core::{
    iterate_experiment, read_rows_csv, run_experiment, summarize, sweep, system_lambda, write_json,
    write_rows_csv, write_summary_csv, ExperimentConfig, ExperimentOutput, SummaryRow, SweepParam,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "chaoscast",
    version,
    about = "Forecast chaotic systems with a data-assimilated reservoir correction",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (single inflation value or a full inflation grid)
    Run(RunArgs),
    /// Re-run an experiment at several values of one parameter
    Sweep(SweepArgs),
    /// Alternate assimilation and training, refitting on each pass
    Iterate(IterateArgs),
    /// Estimate the largest Lyapunov exponent of the configured system
    Lyapunov(LyapunovArgs),
    /// Recompute the summary table from a persisted row table
    Stats(StatsArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment configuration (defaults to the built-in `--system` config)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Built-in configuration to start from when --config is absent
    #[arg(long, value_enum, default_value_t = SystemArg::Lorenz)]
    system: SystemArg,

    /// Override the configuration's master seed
    #[arg(long)]
    seed: Option<u64>,

    /// Override the configuration's replica count
    #[arg(long)]
    replicas: Option<usize>,

    /// Directory to write result files into (created if missing)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Which result files to write under --out
    #[arg(long, value_enum, default_value_t = Format::Both)]
    format: Format,

    /// Exit with status 2 if any replica failed
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Parameter to sweep
    #[arg(long, value_enum)]
    param: ParamArg,

    /// Comma-separated parameter values
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

#[derive(Args)]
struct IterateArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Number of assimilate-and-retrain passes (at least 1)
    #[arg(long, default_value_t = 2)]
    iterations: usize,
}

#[derive(Args)]
struct LyapunovArgs {
    /// JSON experiment configuration (defaults to the built-in `--system` config)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Built-in configuration to start from when --config is absent
    #[arg(long, value_enum, default_value_t = SystemArg::Lorenz)]
    system: SystemArg,

    /// Override the configuration's master seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StatsArgs {
    /// Row table (CSV) produced by an earlier run/sweep/iterate
    rows: PathBuf,

    /// Directory to write summary.csv into (otherwise print only)
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SystemArg {
    Lorenz,
    Ks,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Rho,
    Epsilon,
    Sigma,
    Beta,
}

impl From<ParamArg> for SweepParam {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::Rho => SweepParam::Rho,
            ParamArg::Epsilon => SweepParam::ModelError,
            ParamArg::Sigma => SweepParam::Sigma,
            ParamArg::Beta => SweepParam::Beta,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; everything else is a
            // configuration error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load_config(&args.common)?;
            let output = run_experiment(&cfg)?;
            finish(&args.common, &output)
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args.common)?;
            let output = sweep(&cfg, args.param.into(), &args.values)?;
            finish(&args.common, &output)
        }
        Command::Iterate(args) => {
            let cfg = load_config(&args.common)?;
            let output = iterate_experiment(&cfg, args.iterations)?;
            finish(&args.common, &output)
        }
        Command::Lyapunov(args) => {
            let common = CommonArgs {
                config: args.config,
                system: args.system,
                seed: args.seed,
                replicas: None,
                out: None,
                format: Format::Both,
                strict: false,
            };
            let cfg = load_config(&common)?;
            let lambda = system_lambda(&cfg)?;
            println!("largest Lyapunov exponent: {lambda:.6} per time unit");
            Ok(ExitCode::SUCCESS)
        }
        Command::Stats(args) => {
            let file = File::open(&args.rows)
                .with_context(|| format!("opening {}", args.rows.display()))?;
            let rows = read_rows_csv(BufReader::new(file))?;
            let summaries = summarize(&rows);
            print_summaries(&summaries);
            if let Some(dir) = &args.out {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join("summary.csv");
                write_summary_csv(File::create(&path)?, &summaries)?;
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let seed = common.seed;
    let mut cfg = match &common.config {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            serde_json::from_reader(BufReader::new(file))
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => match common.system {
            SystemArg::Lorenz => ExperimentConfig::lorenz_default(seed.unwrap_or(0)),
            SystemArg::Ks => ExperimentConfig::ks_default(seed.unwrap_or(0)),
        },
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(replicas) = common.replicas {
        if replicas == 0 {
            bail!("--replicas must be at least 1");
        }
        cfg.replicas = replicas;
    }
    Ok(cfg)
}

/// Report an experiment to stdout, persist it per --out/--format, and turn
/// replica failures into the exit status.
fn finish(common: &CommonArgs, output: &ExperimentOutput) -> Result<ExitCode> {
    println!(
        "largest Lyapunov exponent: {:.6} per time unit",
        output.lambda_max
    );
    let valid_times: Vec<&SummaryRow> = output
        .summaries
        .iter()
        .filter(|s| s.metric == "valid_time" || s.iteration > 0)
        .collect();
    print_summary_rows(&valid_times);
    if let Some(best) = &output.best_rho {
        println!(
            "optimal inflation: baseline rho {} (median valid time {:.3}), \
             corrected rho {} (median valid time {:.3})",
            best.baseline_rho,
            best.baseline_median_valid_time,
            best.mlda_rho,
            best.mlda_median_valid_time
        );
    }
    if !output.failures.is_empty() {
        eprintln!("{} replica(s) failed:", output.failures.len());
        for f in &output.failures {
            eprintln!("  {} replica {}: {}", f.context, f.replica, f.message);
        }
    }

    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();
        if matches!(common.format, Format::Json | Format::Both) {
            let path = dir.join("results.json");
            write_json(File::create(&path)?, output)?;
            written.push(path);
        }
        if matches!(common.format, Format::Csv | Format::Both) {
            let rows_path = dir.join("rows.csv");
            write_rows_csv(File::create(&rows_path)?, &output.rows)?;
            written.push(rows_path);
            let summary_path = dir.join("summary.csv");
            write_summary_csv(File::create(&summary_path)?, &output.summaries)?;
            written.push(summary_path);
        }
        for path in written {
            println!("wrote {}", path.display());
        }
    }

    if common.strict && !output.failures.is_empty() {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summaries(summaries: &[SummaryRow]) {
    print_summary_rows(&summaries.iter().collect::<Vec<_>>());
}

fn print_summary_rows(rows: &[&SummaryRow]) {
    if rows.is_empty() {
        println!("(no summary rows)");
        return;
    }
    println!(
        "{:<12} {:>10} {:<9} {:>4} {:<24} {:>5} {:>9} {:>9} {:>9}",
        "sweep", "value", "scheme", "iter", "metric", "n", "p25", "median", "p75"
    );
    for s in rows {
        println!(
            "{:<12} {:>10.4} {:<9} {:>4} {:<24} {:>5} {:>9.4} {:>9.4} {:>9.4}",
            s.sweep_param,
            s.sweep_value,
            format!("{:?}", s.scheme).to_lowercase(),
            s.iteration,
            s.metric,
            s.n,
            s.p25,
            s.median,
            s.p75
        );
    }
}
