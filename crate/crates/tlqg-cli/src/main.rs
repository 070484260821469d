//! `tlqg` — belief-space planning CLI.
//!
//! Subcommands: `plan`, `simulate`, `validate`, `sweep`. Every command takes
//! a scenario config and an output directory and is deterministic for a
//! fixed seed. `TLQG_THREADS` caps the Monte Carlo worker count (results do
//! not depend on it).
//!
//! Exit codes: 0 success and all checks pass, 1 a check failed (planner not
//! converged, statistics out of tolerance, rollout aborted), 2 bad usage,
//! config, or I/O.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tlqg::commands::{self, Overrides};
use tlqg::Error;

#[derive(Parser)]
#[command(name = "tlqg", version, about = "Belief-space motion planning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario config (JSON; see docs/config.md).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the command's artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Override the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the noise scale: the world ε for plan/simulate, the ε list
    /// for validate, the ε grid for sweep.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Override the Monte Carlo sample count.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the nominal trajectory; writes plan.csv, plan.svg, report.json.
    Plan(CommonArgs),
    /// Execute one seeded rollout of a stored plan; writes exec.csv,
    /// estimate.csv, exec.svg.
    Simulate(CommonArgs),
    /// Check the first-order cost error statistics; writes theorem3.csv,
    /// theorem3.json.
    Validate(CommonArgs),
    /// Sweep the noise scale; writes sweep.csv, sweep.svg, sweep.json.
    Sweep(CommonArgs),
}

fn init_thread_pool() -> Result<(), String> {
    let Ok(raw) = std::env::var("TLQG_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| format!("TLQG_THREADS must be a positive integer, got {raw:?}"))?;
    if threads == 0 {
        return Err("TLQG_THREADS must be >= 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| format!("failed to build thread pool: {e}"))
}

fn overrides(args: &CommonArgs) -> Overrides {
    Overrides {
        seed: args.seed,
        epsilon: args.epsilon,
        samples: args.samples,
    }
}

/// Exit 1 for failed checks, 2 for config/usage/I/O errors.
fn error_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::PlanArtifact(_)
        | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn run() -> Result<bool, Error> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Plan(args) => {
            let report = commands::cmd_plan(&args.config, &args.out, &overrides(args))?;
            println!(
                "plan: converged={} iterations={} objective={:.6} terminal_error={:.4}",
                report.converged, report.iterations, report.objective, report.terminal_error
            );
            Ok(report.converged)
        }
        Command::Simulate(args) => {
            let report = commands::cmd_simulate(&args.config, &args.out, &overrides(args))?;
            match report.abort {
                Some(reason) => println!(
                    "simulate: ABORTED ({reason:?}) after {} steps, seed={}",
                    report.steps_completed, report.seed
                ),
                None => println!(
                    "simulate: seed={} max_deviation={:.4} terminal_error={:.4} collided={}",
                    report.seed,
                    report.max_deviation,
                    report.terminal_position_error,
                    report.collided
                ),
            }
            Ok(report.abort.is_none())
        }
        Command::Validate(args) => {
            let report = commands::cmd_validate(&args.config, &args.out, &overrides(args))?;
            for e in &report.entries {
                println!(
                    "validate: epsilon={} mean={:.3e} std_error={:.3e} skewness={:.3} \
                     excess_kurtosis={:.3} pass={}",
                    e.epsilon,
                    e.stats.mean,
                    e.stats.std_error,
                    e.stats.skewness,
                    e.stats.excess_kurtosis,
                    e.pass
                );
            }
            Ok(report.all_pass)
        }
        Command::Sweep(args) => {
            let report = commands::cmd_sweep(&args.config, &args.out, &overrides(args))?;
            for e in &report.sweep.entries {
                println!(
                    "sweep: epsilon={} exit_probability={:.3} mean_cost_gap={:.3e}",
                    e.epsilon, e.exit_probability, e.mean_cost_gap
                );
            }
            match report.fitted_slope {
                Some(s) => println!(
                    "sweep: fitted_slope={s:.3} (range [{}, {}]) monotone={} pass={}",
                    report.slope_range.0,
                    report.slope_range.1,
                    report.exit_monotone_pass,
                    report.all_pass
                ),
                None => println!(
                    "sweep: single point, no fit; monotone={} pass={}",
                    report.exit_monotone_pass, report.all_pass
                ),
            }
            Ok(report.all_pass)
        }
    }
}

fn main() -> ExitCode {
    if let Err(msg) = init_thread_pool() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
