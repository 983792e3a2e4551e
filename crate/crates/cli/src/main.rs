use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use portcon_cli::compare::{collect_inputs, compare, format_comparison, read_backtest, write_comparison};
use portcon_cli::config::{self, Overrides, RunConfig, OUTPUT_ROOT_ENV};
use portcon_cli::report::OutputDir;
use portcon_cli::run::{format_sharpe_table, run};
use portcon_cli::tools::{gen_data, kinks};
use portcon_cli::CliError;
use portcon_core::analytics::{KinkConfig, DEFAULT_KINK_THRESHOLDS};
use portcon_core::backtest::DEFAULT_TARGET_VOL;
use portcon_core::data::SyntheticSpec;

/// Portfolio-construction backtests for equity factor strategies.
#[derive(Debug, Parser)]
#[command(name = "portcon", version)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (pool, factor, scheme) backtest and write all reports.
    Run(RunArgs),
    /// Compare finished results at equal risk.
    Compare(CompareArgs),
    /// Write a synthetic panel in the CSV ingestion format.
    GenData(GenDataArgs),
    /// Detect market kinks on an index CSV (`date,close`).
    Kinks(KinksArgs),
}

#[derive(Debug, Args)]
struct Output {
    /// Output directory; relative paths go under $PORTCON_OUTPUT_ROOT when set.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Overwrite existing reports.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
    #[arg(long)]
    seed: Option<u64>,
    /// Factor id (repeatable): accrual, book, cashflow, divyield, earnyield,
    /// growth, quality, lowbeta, lowvol, momentum, size.
    #[arg(long = "factor")]
    factors: Vec<String>,
    /// Scheme id (repeatable): ff, neutral, beta, betaopt[:k=<int>],
    /// markowitz:k=<int>, costaware:k=<int>.
    #[arg(long = "scheme")]
    schemes: Vec<String>,
    #[arg(long)]
    max_k: Option<usize>,
    #[arg(long)]
    start: Option<NaiveDate>,
    #[arg(long)]
    end: Option<NaiveDate>,
    #[arg(long)]
    commission_bps: Option<f64>,
    #[arg(long)]
    half_spread_bps: Option<f64>,
    /// Correlation estimation window in trading days.
    #[arg(long)]
    window: Option<usize>,
    /// Stocks of every synthetic pool.
    #[arg(long)]
    n_stocks: Option<usize>,
    /// Trading days of every synthetic pool.
    #[arg(long)]
    n_days: Option<usize>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Backtest CSV files, directories holding one, or run output directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    out: Output,
    /// Annualized pre-cost volatility every result is scaled to.
    #[arg(long, default_value_t = DEFAULT_TARGET_VOL)]
    target_vol: f64,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// TOML file with the synthetic panel spec.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: Output,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_stocks: Option<usize>,
    #[arg(long)]
    n_days: Option<usize>,
    #[arg(long)]
    n_sectors: Option<usize>,
    /// Coupling of returns to the lagged momentum predictor.
    #[arg(long)]
    embedded_alpha: Option<f64>,
}

#[derive(Debug, Args)]
struct KinksArgs {
    /// Index closes, daily or weekly, with columns `date,close`.
    #[arg(long)]
    index: PathBuf,
    /// Backtest CSV whose net P&L is conditioned on the kinks.
    #[arg(long)]
    pnl: Option<PathBuf>,
    /// Depth threshold in weekly volatilities (repeatable).
    #[arg(long = "threshold")]
    thresholds: Vec<f64>,
    #[command(flatten)]
    out: Output,
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from)
}

fn output_dir(given: Option<PathBuf>, default: &str) -> PathBuf {
    let dir = given.unwrap_or_else(|| PathBuf::from(default));
    match output_root() {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir,
    }
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run(a) => {
            let file = match &a.config {
                Some(p) => config::read_config(p)?,
                None => RunConfig::default(),
            };
            let overrides = Overrides {
                seed: a.seed,
                output_dir: a.out.output,
                factors: a.factors,
                schemes: a.schemes,
                max_k: a.max_k,
                start: a.start,
                end: a.end,
                commission_bps: a.commission_bps,
                half_spread_bps: a.half_spread_bps,
                correlation_window: a.window,
                n_stocks: a.n_stocks,
                n_days: a.n_days,
            };
            let resolved = config::resolve(file, &overrides)?;
            let outcome = run(&resolved, output_root().as_deref(), a.out.force)?;
            print!("{}", format_sharpe_table(&outcome.summary.world));
            println!("{} report files in {}", outcome.files.len(), outcome.output_dir.display());
        }
        Command::Compare(a) => {
            let inputs = collect_inputs(&a.inputs)?;
            let results =
                inputs.iter().map(|(label, path)| read_backtest(path, label)).collect::<Result<Vec<_>, _>>()?;
            let (cmp, normalized) = compare(&results, a.target_vol)?;
            let mut out = OutputDir::prepare(&output_dir(a.out.output, "portcon-compare"), a.out.force)?;
            write_comparison(&mut out, &cmp, &normalized)?;
            print!("{}", format_comparison(&cmp));
        }
        Command::GenData(a) => {
            let mut spec: SyntheticSpec = match &a.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(v) = a.seed {
                spec.seed = v;
            }
            if let Some(v) = a.n_stocks {
                spec.n_stocks = v;
            }
            if let Some(v) = a.n_days {
                spec.n_days = v;
            }
            if let Some(v) = a.n_sectors {
                spec.n_sectors = v;
            }
            if a.embedded_alpha.is_some() {
                spec.embedded_alpha = a.embedded_alpha;
            }
            let mut out = OutputDir::prepare(&output_dir(a.out.output, "portcon-data"), a.out.force)?;
            gen_data(&spec, &mut out)?;
            println!("synthetic panel written to {}", out.root().display());
        }
        Command::Kinks(a) => {
            let thresholds = if a.thresholds.is_empty() { DEFAULT_KINK_THRESHOLDS.to_vec() } else { a.thresholds };
            let mut out = OutputDir::prepare(&output_dir(a.out.output, "portcon-kinks"), a.out.force)?;
            let s = kinks(&a.index, a.pnl.as_deref(), &thresholds, &KinkConfig::default(), &mut out)?;
            println!("{} weeks, {} events, reports in {}", s.weeks, s.events.len(), out.root().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(std::io::stderr)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
