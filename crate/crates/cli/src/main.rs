use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "difftv",
    version,
    about = "Diffusion sampler convergence harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run schedule, oracle, Jacobian and sampler-form checks.
    Validate {
        config: PathBuf,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute TV/KL for every (T, sampler) and fit convergence rates.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a sweep directory and write SVG plots.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = difftv_cli::configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config, out } => {
            difftv_cli::cmd_validate(&config, out.as_deref()).map(|r| {
                for c in &r.checks {
                    println!(
                        "{} {}: {}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.detail
                    );
                }
                match r.first_failure() {
                    Some(f) => {
                        eprintln!("validation failed at: {}", f.name);
                        false
                    }
                    None => true,
                }
            })
        }
        Command::Sweep { config, out } => {
            difftv_cli::cmd_sweep(&config, out.as_deref()).map(|(rep, dir)| {
                println!("{} rows written to {}", rep.rows.len(), dir.display());
                rep.pinsker_ok
            })
        }
        Command::Report { dir } => difftv_cli::cmd_report(&dir).map(|text| {
            print!("{text}");
            true
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
