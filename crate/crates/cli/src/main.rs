//! Experiment runner for the physics-guided transformer benchmarks.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EXIT_CONFIG, EXIT_USAGE};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "pgt",
    about = "Physics-guided transformer experiment runner",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment suite and write results, logs, and checkpoints.
    Run {
        /// Suite selector: heat | ns | ablation | noise.
        suite: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the invariant checks (fast) or the full statistical criteria.
    Check {
        /// Check level: fast | full.
        #[arg(long, default_value = "fast")]
        level: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a checkpoint over a grid and dump a field CSV.
    Export {
        /// Checkpoint path (alternatively set export.checkpoint).
        checkpoint: Option<String>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline override, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (shorthand for --set out=DIR).
    #[arg(long)]
    out: Option<String>,
    /// Seed count (shorthand for --set seeds=N).
    #[arg(long)]
    seeds: Option<usize>,
}

fn build_config(common: &CommonArgs) -> Result<ExperimentConfig, (i32, String)> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path).map_err(|e| (EXIT_CONFIG, e.0))?,
        None => ExperimentConfig::default(),
    };
    for pair in &common.set {
        let Some((key, value)) = pair.split_once('=') else {
            return Err((EXIT_USAGE, format!("--set expects KEY=VALUE, got '{pair}'")));
        };
        cfg.set(key.trim(), value.trim())
            .map_err(|e| (EXIT_CONFIG, e.0))?;
    }
    if let Some(out) = &common.out {
        cfg.set("out", out).map_err(|e| (EXIT_CONFIG, e.0))?;
    }
    if let Some(seeds) = common.seeds {
        cfg.set("seeds", &seeds.to_string())
            .map_err(|e| (EXIT_CONFIG, e.0))?;
    }
    Ok(cfg)
}

fn run() -> i32 {
    if let Ok(threads) = std::env::var("PGT_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) => pgt_core::bench::suites::set_worker_threads(n),
            Err(_) => {
                eprintln!("PGT_THREADS must be an integer, got '{threads}'");
                return EXIT_USAGE;
            }
        }
    }

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Clap's own message (help/version included), but with the
            // stable usage exit code.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };

    let (result, label) = match &cli.command {
        Command::Run { suite, common } => {
            if !matches!(suite.as_str(), "heat" | "ns" | "ablation" | "noise") {
                eprintln!("unknown suite '{suite}' (expected heat|ns|ablation|noise)");
                return EXIT_USAGE;
            }
            match build_config(common) {
                Ok(cfg) => (commands::cmd_run(suite, &cfg), "run"),
                Err((code, msg)) => {
                    eprintln!("{msg}");
                    return code;
                }
            }
        }
        Command::Check { level, common } => match build_config(common) {
            Ok(cfg) => (commands::cmd_check(level, &cfg), "check"),
            Err((code, msg)) => {
                eprintln!("{msg}");
                return code;
            }
        },
        Command::Export { checkpoint, common } => match build_config(common) {
            Ok(cfg) => (commands::cmd_export(checkpoint.as_deref(), &cfg), "export"),
            Err((code, msg)) => {
                eprintln!("{msg}");
                return code;
            }
        },
    };

    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{label}: {}", e.message());
            e.code()
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(u8::try_from(run()).unwrap_or(70))
}
