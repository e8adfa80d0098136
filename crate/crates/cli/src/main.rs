//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration or parse error,
//! 3 I/O error, 4 malformed or inconsistent data, 5 numerical failure,
//! 6 internal shape or validation error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedshield::harness::{load_config, run_experiment, summarize};
use fedshield::par::{workers_from_env, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "fedshield", version, about = "Federated-learning poisoning and defense simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write rounds.csv, tasks.csv and manifest.toml.
    #[command(after_help = format!("Set {WORKERS_ENV}=N to cap worker threads."))]
    Run {
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare finished runs, grouped by defense, policy and vulnerable count.
    Summarize {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write summary.csv and reward_ma.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file and list every problem found.
    Validate { config: PathBuf },
}

fn execute(command: Command) -> fedshield::Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(dir) = out {
                cfg.run.output_dir = dir;
            }
            let report = run_experiment(&cfg, &cfg.run.output_dir, workers_from_env())?;
            for t in &report.tasks {
                println!(
                    "task {}: final accuracy {:.4}, mean utility {:.4}",
                    t.task_id, t.final_accuracy, t.mean_utility
                );
            }
            println!("wrote {}", report.out_dir.display());
            Ok(())
        }
        Command::Summarize { dirs, out } => {
            let summary = summarize(&dirs)?;
            print!("{}", summary.table_csv()?);
            if let Some(dir) = out {
                summary.write(&dir)?;
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!(
                "ok: {} devices, {} selected per round, {} tasks x {} rounds",
                cfg.topology.ed_count, cfg.topology.select_count, cfg.run.task_count, cfg.run.rounds_per_task
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
