use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tclsim::runner;
use tclsim::scenario::parse_modes;
use tclsim::{commit, CliError, Output, Scenario};
use tclsim_core::exec::Execution;

/// Driven open-system simulations with the time-convolutionless master equation.
///
/// Scenario files are TOML; all outputs are CSV with a header row and 17
/// significant digits. Exit codes: 0 ok, 2 configuration error, 3 numerical abort.
#[derive(Parser)]
#[command(name = "tclsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Solver mode(s): closed, redfield, full_tcl (repeatable; overrides the file).
    #[arg(long, global = true)]
    mode: Vec<String>,
    /// Directory for the CSV outputs.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads (1 runs sequentially; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Integration step in units of 1/ω_q (overrides the file).
    #[arg(long, global = true)]
    step: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every requested mode and write trajectories (and gate metrics for DRAG pulses).
    Simulate { file: PathBuf },
    /// Gate-time sweep with per-point ξ optimization, e.g. `--tg 3:8.5:0.5` (ns).
    Sweep {
        file: PathBuf,
        #[arg(long)]
        tg: String,
    },
    /// Optimize the DRAG coefficient on the closed dynamics.
    OptimizeDrag {
        file: PathBuf,
        /// Gate time in ns (default: the file's gate time).
        #[arg(long)]
        tg: Option<f64>,
    },
    /// Unitary / uncorrelated / correlated / total error decomposition.
    Table1 { file: PathBuf },
    /// Dump S(ω), S̄(ω), J(ω) and C(τ) for every noise block.
    Spectra {
        file: PathBuf,
        /// Frequency range ±ω_max in units of ω_q.
        #[arg(long, default_value_t = 3.0)]
        omega_max: f64,
        /// Largest lag in units of 1/ω_q.
        #[arg(long, default_value_t = 200.0)]
        tau_max: f64,
        #[arg(long, default_value_t = 601)]
        points: usize,
    },
}

fn load(file: &PathBuf, c: &Common) -> Result<Scenario, CliError> {
    let mut sc = Scenario::load(file)?;
    let modes = if c.mode.is_empty() { None } else { Some(parse_modes(&c.mode)?) };
    sc.apply_overrides(modes, c.step)?;
    Ok(sc)
}

fn run(cli: Cli) -> Result<Vec<Output>, CliError> {
    let c = &cli.common;
    let exec = match c.threads {
        Some(0) => return Err(CliError::Config("--threads must be at least 1".into())),
        Some(1) => Execution::Sequential,
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => {
            log::warn!("built without the `parallel` feature; running sequentially");
            Execution::Sequential
        }
        None => Execution::Parallel,
    };
    match &cli.command {
        Command::Simulate { file } => runner::simulate(&load(file, c)?, exec),
        Command::Sweep { file, tg } => {
            let sc = load(file, c)?;
            let tgs = runner::parse_range(tg)?;
            Ok(runner::sweep(&sc, &tgs, exec)?.0)
        }
        Command::OptimizeDrag { file, tg } => {
            let sc = load(file, c)?;
            let (out, opt) = runner::optimize_drag(&sc, *tg, exec)?;
            println!("xi* = {:.6}  F = {:.10}  unimodal = {}", opt.xi, opt.fidelity, opt.unimodal);
            Ok(out)
        }
        Command::Table1 { file } => {
            let sc = load(file, c)?;
            let (out, t) = runner::table1(&sc, exec)?;
            println!("xi* = {:.6}", t.xi);
            println!("{:<14}{:>14}{:>14}", "", "gate error", "leakage");
            for (name, e, l) in t.rows {
                println!("{name:<14}{e:>14.4e}{l:>14.4e}");
            }
            Ok(out)
        }
        Command::Spectra {
            file,
            omega_max,
            tau_max,
            points,
        } => runner::spectra(&load(file, c)?, *omega_max, *tau_max, *points),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out_dir = cli.common.out_dir.clone();
    let result = run(cli).and_then(|outputs| {
        commit(&outputs, &out_dir)?;
        Ok(outputs)
    });
    match result {
        Ok(outputs) => {
            for o in outputs {
                eprintln!("wrote {}", out_dir.join(o.name).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
