//! Thin command-line front end: loads a config, dispatches one experiment
//! through the library runner, and maps failures to exit codes
//! (0 success, 1 i/o or parse error, 2 violated invariant).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qvikit::config::load_config;
use qvikit::error::Error;
use qvikit::runner::{run, verify_bundle, RunOptions};

#[derive(Parser)]
#[command(
    name = "qvikit",
    version,
    about = "Extremal solutions of obstacle-type quasi-variational inequalities",
    after_help = "Set QVIKIT_LOG={error|info|debug} to control logging."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output bundle directory; must not exist yet.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one QVI instance for its extremal solution pair.
    Solve(RunArgs),
    /// Monotone forcing-term perturbation experiment.
    Stability(RunArgs),
    /// Oscillating perturbation through envelope sequences.
    Envelope(RunArgs),
    /// Scalar sharpness counterexample on the one-node lattice.
    Counterexample(RunArgs),
    /// Reduced optimal control over piecewise-constant controls.
    Control(RunArgs),
    /// Re-check a result bundle's invariants from its files.
    Verify {
        /// Bundle directory written by a previous run.
        #[arg(long)]
        bundle: PathBuf,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse(_) => 1,
        _ => 2,
    }
}

fn run_experiment(args: RunArgs, expected_tag: &str) -> Result<(), Error> {
    let config = load_config(&args.config)?;
    if config.experiment.name() != expected_tag {
        return Err(Error::Validation {
            violations: vec![format!(
                "subcommand '{expected_tag}' does not match the config experiment tag '{}'",
                config.experiment.name()
            )],
        });
    }
    let base = args
        .config
        .parent()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let summary = run(
        &config,
        &base,
        &RunOptions { out_dir: args.out, seed_override: args.seed, threads: args.threads },
    )?;
    println!(
        "{} experiment finished; bundle at {}",
        summary.experiment,
        summary.bundle_dir.display()
    );
    Ok(())
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Solve(args) => run_experiment(args, "solve"),
        Command::Stability(args) => run_experiment(args, "stability"),
        Command::Envelope(args) => run_experiment(args, "envelope"),
        Command::Counterexample(args) => run_experiment(args, "counterexample"),
        Command::Control(args) => run_experiment(args, "control"),
        Command::Verify { bundle } => {
            let summary = verify_bundle(&bundle)?;
            for line in &summary.checks {
                println!("{line}");
            }
            println!("bundle {} verified ({} checks)", bundle.display(), summary.checks.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("QVIKIT_LOG")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
