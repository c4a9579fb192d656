use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use exitflow::config::ExperimentConfig;
use exitflow::pipeline::{self, Command};

#[derive(Parser)]
#[command(name = "exitflow", version, about = "Optimal-exit mean field game simulator")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// Suppress progress logging (errors are still printed).
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve the value function for the config's speed field.
    SolveHjb(RunArgs),
    /// Optimal trajectories from seeded random starts.
    Trajectories(RunArgs),
    /// Fixed-point iteration to a Lagrangian equilibrium.
    Equilibrium(RunArgs),
    /// Equilibria along the cutoff family as its width shrinks.
    EpsilonStudy(RunArgs),
    /// Property checks; exits non-zero when any check fails.
    Verify(RunArgs),
    /// Summarise and audit an output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging(quiet: bool) {
    let default = if quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EXITFLOW_LOG", default))
        .format_timestamp(None)
        .init();
}

fn execute(command: Command, args: RunArgs) -> Result<bool, exitflow::Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    if let Some(t) = cfg.threads {
        // only the first pool configuration in a process takes effect
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let outcome = pipeline::run(command, &cfg, &args.out)?;
    log::info!(
        "{} finished: {} files, fingerprint {}",
        command.name(),
        outcome.manifest.files.len(),
        outcome.manifest.fingerprint()
    );
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.quiet);
    let (command, args) = match cli.command {
        Sub::SolveHjb(a) => (Command::SolveHjb, a),
        Sub::Trajectories(a) => (Command::Trajectories, a),
        Sub::Equilibrium(a) => (Command::Equilibrium, a),
        Sub::EpsilonStudy(a) => (Command::EpsilonStudy, a),
        Sub::Verify(a) => (Command::Verify, a),
        Sub::Report { out } => {
            return match pipeline::report(&out) {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
    };
    match execute(command, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
