//! `stopline` command-line front end.
//!
//! Exit codes: 0 success, 1 assumption or validation failure, 2 usage,
//! 3 numerical non-convergence.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use stopline::Error;

use commands::Outcome;
use config::UsageError;

#[derive(Parser, Debug)]
#[command(name = "stopline", version, about = "Branching diffusions, stopping lines and their obstacle problem")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, short, global = true, default_value = "stopline.json")]
    config: PathBuf,

    /// Override a config field, e.g. `--set mc.reps=5000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads; falls back to STOPLINE_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Moment constants and pointwise model checks.
    Check,
    /// Solve the obstacle problem on the configured grid.
    Solve,
    /// Simulate one forest and write its genealogy.
    Simulate,
    /// Monte Carlo value of the configured stopping rule.
    Value,
    /// Cross-check the solved grid against Monte Carlo.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Value => "value",
            Command::Verify => "verify",
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. } | Error::NonMonotone { .. }) => 3,
        _ => 1,
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, UsageError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("STOPLINE_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| UsageError(anyhow::anyhow!("STOPLINE_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(UsageError(anyhow::anyhow!("thread count must be at least 1")).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = config::load(&cli.config, &cli.overrides)?;
    cfg.model.validate()?;
    fs::create_dir_all(&cfg.output)
        .map_err(|e| UsageError(anyhow::anyhow!("creating {}: {e}", cfg.output.display())))?;
    let started = unix_now();
    let out = cfg.output.as_path();
    let outcome = match cli.command {
        Command::Check => commands::check(&cfg, out),
        Command::Solve => commands::solve_cmd(&cfg, out),
        Command::Simulate => commands::simulate(&cfg, out),
        Command::Value => commands::value(&cfg, out),
        Command::Verify => commands::verify(&cfg, out),
    }?;
    commands::write_meta(out, cli.command.name(), started, unix_now(), rayon::current_num_threads())?;
    Ok(outcome)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
