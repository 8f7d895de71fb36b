use clap::{Parser, Subcommand};
use cph_cli::commands::{self, CliError, Context};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cph", version, about = "Constant-pH lambda-dynamics titrations on model systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment spec (key = value).
    #[arg(long, global = true, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the spec).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for replica runs.
    #[arg(long, global = true, value_name = "K", env = "CPH_JOBS")]
    jobs: Option<usize>,
    /// Disable dynamic barrier optimisation.
    #[arg(long, global = true)]
    no_dbo: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fit Vmm polynomials from the reference profiles.
    Calibrate,
    /// Run a single replica.
    Simulate,
    /// Run the pH × replica grid and fit titration curves (resumable).
    Titrate,
    /// Coupling screen and FMA on titration trajectories.
    Analyze,
    /// Collect results into report.json and report.md.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let spec = cli.spec.ok_or_else(|| CliError::User("--spec FILE is required".into()))?;
    let out = cli.out.ok_or_else(|| CliError::User("--out DIR is required".into()))?;
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let ctx = Context::load(&spec, out, cli.seed, jobs, cli.no_dbo)?;
    match cli.command {
        Command::Calibrate => commands::calibrate(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Titrate => commands::titrate(&ctx),
        Command::Analyze => commands::analyze(&ctx),
        Command::Report => commands::report(&ctx),
    }
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
    let result = std::panic::catch_unwind(|| run(cli));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(2),
    }
}
