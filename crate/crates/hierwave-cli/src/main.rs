//! Command-line runner: scenario execution, verification, sweeps and golden
//! fixture regeneration for the moving-boundary Stackelberg–Nash wave solver.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 solver
//! non-convergence.

mod config;
mod runner;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hierwave", version, about = "Stackelberg-Nash boundary control of a wave equation on a growing interval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// RNG seed; overrides run.seed from the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides output.dir from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Parallel sweep rows (sweep mode only).
    #[arg(long, value_name = "N", default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Forward solve with prescribed controls and initial data.
    Simulate(RunArgs),
    /// Follower Nash best response for a given leader control.
    Nash(RunArgs),
    /// Leader dual solve, control recovery and certificates.
    Leader(RunArgs),
    /// Identity and invariant suite with measured values.
    Verify(RunArgs),
    /// Cartesian sweep over list-valued config keys.
    Sweep(RunArgs),
    /// Oracle maintenance commands.
    #[command(subcommand)]
    Oracle(OracleCommand),
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Rewrite the golden CSV fixtures from the dense reference paths.
    Regen {
        /// Required acknowledgement that fixtures will be overwritten.
        #[arg(long)]
        confirm: bool,
        /// Fixture directory.
        #[arg(long, value_name = "DIR", default_value = "crates/hierwave/testdata/golden")]
        out: PathBuf,
    },
}

fn execute(mode: &str, args: &RunArgs) -> Result<runner::RunSummary> {
    let cfg = RunConfig::load(&args.config)?;
    if let Some(declared) = cfg.raw("run.mode") {
        if declared != mode {
            bail!(
                "config error: run.mode = '{declared}' conflicts with the '{mode}' subcommand"
            );
        }
    }
    let seed = match args.seed {
        Some(s) => s,
        None => cfg.u64_or("run.seed", 0)?,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(cfg.str_or("output.dir", "out")));
    std::fs::create_dir_all(&out)?;

    let summary = match mode {
        "simulate" => runner::run_simulate(&cfg, &out, seed)?,
        "nash" => runner::run_nash(&cfg, &out, seed)?,
        "leader" => runner::run_leader(&cfg, &out, seed)?,
        "verify" => runner::run_verify(&cfg, &out, seed)?,
        "sweep" => runner::run_sweep(&cfg, &out, seed, args.jobs)?,
        _ => unreachable!(),
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(out.join("summary.json"), json)?;
    println!(
        "{mode}: done in {:.2}s, artifacts in {}",
        summary.wall_time_s,
        out.display()
    );
    Ok(summary)
}

fn exit_code_for(err: &anyhow::Error) -> ExitCode {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hierwave::Error>() {
            if matches!(e, hierwave::Error::NonConvergence { .. }) {
                return ExitCode::from(2);
            }
        }
    }
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => execute("simulate", a).map(|_| ()),
        Command::Nash(a) => execute("nash", a).map(|_| ()),
        Command::Leader(a) => execute("leader", a).map(|_| ()),
        Command::Verify(a) => execute("verify", a).map(|_| ()),
        Command::Sweep(a) => execute("sweep", a).map(|_| ()),
        Command::Oracle(OracleCommand::Regen { confirm, out }) => {
            if !*confirm {
                eprintln!("error: refusing to overwrite golden fixtures without --confirm");
                return ExitCode::from(1);
            }
            match runner::regen_golden(out) {
                Ok(paths) => {
                    for p in paths {
                        println!("wrote {}", p.display());
                    }
                    Ok(())
                }
                Err(e) => Err(e),
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
    }
}
