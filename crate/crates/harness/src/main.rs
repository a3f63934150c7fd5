use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use icl_harness::batch::{compare_runs, run_batch, BatchOptions, HarnessError, RunSummary};
use icl_harness::config::{load_config, Backend, ConfigError, Emit, ExperimentConfig, DEFAULT_OUTPUT};
use icl_harness::oracle::OracleConfig;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "icl", version, about = "Run incentivized collaborative learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seed list; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Suppress the summary printout.
    #[arg(long)]
    quiet: bool,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Paired per-seed comparison of two summary files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        quiet: bool,
    },
    /// Run the built-in oracle checks.
    Oracle {
        /// Oracle config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        args: RunArgs,
    },
}

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn harness_exit(err: HarnessError) -> ExitCode {
    let code = match err {
        HarnessError::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    };
    fail(code, err)
}

fn print_summary(summary: &RunSummary) {
    println!("backend {} ({} seeds)", summary.backend, summary.per_seed.len());
    for (name, agg) in &summary.aggregate {
        println!("  {name:<24} mean {:>14.6}  sd {:>12.6}", agg.mean, agg.std_dev);
    }
    for (name, ok) in &summary.checks {
        println!("  check {name:<18} {}", if *ok { "pass" } else { "FAIL" });
    }
}

fn execute(config: ExperimentConfig, args: RunArgs) -> ExitCode {
    let mut config = config;
    if let Some(seeds) = args.seeds {
        config = match config.with_seeds(seeds) {
            Ok(c) => c,
            Err(e) => return fail(EXIT_CONFIG, e),
        };
    }
    if let Some(out) = args.out {
        config.output = out;
    }
    match run_batch(&config, BatchOptions { jobs: args.jobs }) {
        Ok(summary) => {
            if !args.quiet {
                print_summary(&summary);
            }
            if summary.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Err(e) => harness_exit(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, args } => match load_config(&config) {
            Ok(c) => execute(c, args),
            Err(e) => fail(EXIT_CONFIG, e),
        },
        Command::Oracle { config, args } => {
            let config = match config {
                Some(path) => match load_config(&path) {
                    Ok(c) if matches!(c.backend, Backend::Oracle(_)) => c,
                    Ok(c) => {
                        return fail(
                            EXIT_CONFIG,
                            ConfigError::Invalid(vec![icl_core::ParamError::new(
                                "backend",
                                format!("expected oracle, found {}", c.backend.name()),
                            )]),
                        )
                    }
                    Err(e) => return fail(EXIT_CONFIG, e),
                },
                None => ExperimentConfig {
                    backend: Backend::Oracle(OracleConfig::default()),
                    seeds: vec![0],
                    output: PathBuf::from(DEFAULT_OUTPUT),
                    emit: Emit::default(),
                },
            };
            execute(config, args)
        }
        Command::Compare { a, b, metric, quiet } => {
            let result = RunSummary::load(&a)
                .and_then(|sa| RunSummary::load(&b).map(|sb| (sa, sb)))
                .and_then(|(sa, sb)| compare_runs(&sa, &sb, &metric));
            match result {
                Ok(cmp) => {
                    if !quiet {
                        println!("seed,a,b,delta");
                        for d in &cmp.deltas {
                            println!("{},{:?},{:?},{:?}", d.seed, d.a, d.b, d.delta);
                        }
                    }
                    println!("win_fraction {:?}", cmp.win_fraction);
                    ExitCode::SUCCESS
                }
                Err(e) => harness_exit(e),
            }
        }
    }
}
