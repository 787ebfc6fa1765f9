use std::io::stdout;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ula::cli::{cmd_check, cmd_oracle, cmd_rate, cmd_sample, Overrides, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "ula", about = "Decreasing-step Langevin sampling and rate-fitting harness")]
struct Cli {
    /// Worker threads for chain simulation (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the chains and write one batch file per checkpoint plus a manifest.
    Sample {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: snapshots, distances per checkpoint, slope fit, verdict.
    Rate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe the model's dissipation and Hölder constants (informational).
    Check {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the built-in estimator self-checks.
    Oracle,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .is_err()
        {
            eprintln!("config error: could not configure {} threads", cli.threads);
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let mut out = stdout();
    let code = match cli.command {
        Command::Sample { config, seed, out: dir } => {
            cmd_sample(&config, &Overrides { seed, out: dir }, &mut out)
        }
        Command::Rate { config, seed, out: dir } => {
            cmd_rate(&config, &Overrides { seed, out: dir }, &mut out)
        }
        Command::Check { config, seed } => {
            cmd_check(&config, &Overrides { seed, out: None }, &mut out)
        }
        Command::Oracle => cmd_oracle(&mut out),
    };
    ExitCode::from(code as u8)
}
