use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use preb_cli::{parse_config, CliError, CliResult, ExperimentConfig};

#[derive(Parser)]
#[command(name = "preb-sim", version, about = "Open fermionic chains with periodically refreshed baths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment; writes timeline.csv and meta.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Double τ from τ₀ until successive traces agree; writes convergence.json.
    Certify {
        config: PathBuf,
        #[arg(long)]
        tau0: f64,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, default_value_t = 4)]
        max_doublings: usize,
        /// Time horizon of every trace (defaults to run.t_max or τ·n_steps).
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        force: bool,
    },
    /// Merge PReB runs with several offsets t₁ into one timeline.
    Reconstruct {
        config: PathBuf,
        /// Comma-separated offsets; defaults to run.t1.
        #[arg(long, value_delimiter = ',')]
        t1: Option<Vec<f64>>,
        #[arg(long)]
        force: bool,
    },
    /// Exact steady state of a non-interacting configuration as JSON.
    Ness {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare tail-averaged observables of a timeline with a NESS file.
    Compare {
        ness: PathBuf,
        timeline: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        tail: f64,
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
        /// Steady-state detector window (defaults to the tail length).
        #[arg(long)]
        window: Option<f64>,
    },
    /// Dump the chain coefficients of both baths.
    Chainmap {
        config: PathBuf,
        #[arg(long)]
        sites: Option<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Dump the decay of the bath correlation functions and τ_M.
    Memory {
        config: PathBuf,
        #[arg(long, default_value_t = 50.0)]
        t_max: f64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path) -> CliResult<ExperimentConfig> {
    parse_config(path).map_err(CliError::Config)
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Backend(e.into()))? + "\n";
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Backend(e.into())),
        None => match std::io::stdout().write_all(text.as_bytes()) {
            // a closed pipe (`| head`) is the reader's choice, not a failure
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
            r => r.map_err(|e| CliError::Backend(e.into())),
        },
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Run { config, force } => {
            let dir = preb_cli::run_experiment(&load(&config)?, "run", force)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Certify { config, tau0, tol, max_doublings, horizon, force } => {
            let r = preb_cli::certify(&load(&config)?, tau0, tol, max_doublings, horizon, force)?;
            for (a, b, d) in &r.deviations {
                println!("τ = {a} vs {b}: max deviation {d:.3e}");
            }
            match r.certified_by {
                Some((a, b)) => println!("converged: τ = {a} certified against τ = {b}"),
                None => println!("not converged within {} doublings", r.deviations.len()),
            }
        }
        Command::Reconstruct { config, t1, force } => {
            let dir = preb_cli::reconstruct(&load(&config)?, t1, force)?;
            eprintln!("wrote {}", dir.display());
        }
        Command::Ness { config, out } => emit(&preb_cli::ness(&load(&config)?)?, out.as_deref())?,
        Command::Compare { ness, timeline, tail, tol, window } => {
            let c = preb_cli::compare(&ness, &timeline, tail, tol, window)?;
            emit(&c, None)?;
            if !c.pass {
                return Err(CliError::Comparison(format!("max deviation {:.3e} exceeds {tol:.1e}", c.max_deviation)));
            }
        }
        Command::Chainmap { config, sites, out } => emit(&preb_cli::chainmap(&load(&config)?, sites)?, out.as_deref())?,
        Command::Memory { config, t_max, out } => emit(&preb_cli::memory(&load(&config)?, t_max)?, out.as_deref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
