use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wrs::bench::{self, BenchError, RunConfig, SelectVariant};
use wrs::validate::{self, Options, Scale};
use wrs::workload::WeightDist;
use wrs_core::{Mode, SampleSize};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

/// Distributed weighted reservoir sampling over mini-batch streams.
#[derive(Debug, Parser)]
#[command(name = "wrs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a synthetic stream and write per-batch metrics as CSV.
    Run(RunArgs),
    /// Run the acceptance checks and print one line per check.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Weighted,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightsArg {
    Uniform,
    Skewed,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Number of PEs.
    #[arg(long, default_value_t = 4)]
    p: usize,
    /// Sample size.
    #[arg(long, default_value_t = 100, conflicts_with_all = ["k_lo", "k_hi"])]
    k: u64,
    /// Lower end of the sample size range (range selection).
    #[arg(long, requires = "k_hi")]
    k_lo: Option<u64>,
    /// Upper end of the sample size range (range selection).
    #[arg(long, requires = "k_lo")]
    k_hi: Option<u64>,
    /// Items per PE per batch.
    #[arg(long, default_value_t = 1000)]
    b: usize,
    #[arg(long, default_value_t = 10)]
    batches: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Weighted)]
    mode: ModeArg,
    /// exact-1, exact-d (uses --pivots), exact-<N>, range or gather.
    #[arg(long, default_value = "exact-1")]
    select: String,
    /// Pivots per round for exact-d and range.
    #[arg(long, default_value_t = 8)]
    pivots: usize,
    #[arg(long, value_enum, default_value_t = WeightsArg::Uniform)]
    weights: WeightsArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum number of PEs running at once (defaults to p).
    #[arg(long)]
    threads: Option<usize>,
    /// Metrics CSV path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary CSV path; printed after the metrics if omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    run_id: String,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Use the full acceptance sizes (minutes instead of seconds).
    #[arg(long)]
    full: bool,
    /// Only run these checks, e.g. `--only 1,5`.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=11))]
    only: Vec<u8>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    threads: usize,
    /// Halve the threshold mid-run in the invariant check. Used to test
    /// that the check can fail.
    #[arg(long, hide = true)]
    corrupt_threshold: bool,
}

fn parse_select(s: &str, pivots: usize) -> Option<SelectVariant> {
    match s {
        "range" => Some(SelectVariant::Range { pivots }),
        "gather" => Some(SelectVariant::Gather),
        "exact-d" => Some(SelectVariant::Exact { pivots }),
        _ => s
            .strip_prefix("exact-")?
            .parse()
            .ok()
            .map(|pivots| SelectVariant::Exact { pivots }),
    }
}

fn run_config(args: &RunArgs) -> Result<RunConfig, String> {
    let select = parse_select(&args.select, args.pivots)
        .ok_or_else(|| format!("unknown selection variant '{}'", args.select))?;
    let size = match (args.k_lo, args.k_hi) {
        (Some(lower), Some(upper)) => SampleSize::Range { lower, upper },
        _ => SampleSize::Fixed(args.k),
    };
    let config = RunConfig {
        run_id: args.run_id.clone(),
        p: args.p,
        size,
        b: args.b,
        batches: args.batches,
        mode: match args.mode {
            ModeArg::Weighted => Mode::Weighted,
            ModeArg::Uniform => Mode::Uniform,
        },
        select,
        weights: match args.weights {
            WeightsArg::Uniform => WeightDist::Uniform,
            WeightsArg::Skewed => WeightDist::SkewedNormal,
        },
        seed: args.seed,
        threads: args.threads.unwrap_or(args.p),
    };
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, BenchError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_run(args: &RunArgs) -> ExitCode {
    let config = match run_config(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = bench::run(&config).and_then(|out| {
        match &args.out {
            Some(path) => {
                let mut w = create(path)?;
                out.write_csv(&mut w)?;
                w.flush()?;
            }
            None => out.write_csv(io::stdout().lock())?,
        }
        match &args.summary {
            Some(path) => {
                let mut w = create(path)?;
                out.summary.write_csv(&mut w)?;
                w.flush()?;
            }
            None if args.out.is_some() => out.summary.write_csv(io::stdout().lock())?,
            None => out.summary.write_csv(io::stderr().lock())?,
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn cmd_validate(args: &ValidateArgs) -> ExitCode {
    let opts = Options {
        scale: if args.full { Scale::Full } else { Scale::Quick },
        seed: args.seed,
        threads: args.threads.max(1),
        corrupt_threshold: args.corrupt_threshold,
    };
    let ids: Vec<u8> = if args.only.is_empty() {
        validate::CRITERIA.iter().map(|c| c.0).collect()
    } else {
        args.only.clone()
    };
    let mut failed = 0;
    for id in ids {
        let outcome = validate::run_criterion(id, &opts).expect("ids are range checked");
        println!("{outcome}");
        failed += usize::from(!outcome.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{failed} check(s) failed");
        ExitCode::from(EXIT_VALIDATION)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate(args) => cmd_validate(args),
    }
}
