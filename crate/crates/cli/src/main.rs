//! `enekf` command line: `run` an experiment config or `validate` it.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_BLOW_UP: u8 = 3;
const EXIT_CHECK: u8 = 4;

/// Environment variable overriding the output directory.
const OUTPUT_DIR_ENV: &str = "ENEKF_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "enekf", version, about = "Extended and ensemble Kalman-Bucy filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Overrides the config's `output_dir` and the ENEKF_OUTPUT_DIR variable.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Exit with status 4 when an experiment verdict fails.
        #[arg(long)]
        check: bool,
        /// Worker threads (results do not depend on this).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Report configuration errors and stability warnings.
    Validate { config: PathBuf },
}

fn read(path: &PathBuf) -> Result<String, ExitCode> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_CONFIG)
    })
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => {
            let text = match read(&config) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let (_, v) = config::validate(&text);
            for e in &v.errors {
                println!("error: {e}");
            }
            for w in &v.warnings {
                println!("warning: {w}");
            }
            if v.errors.is_empty() {
                println!("ok ({} warnings)", v.warnings.len());
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CONFIG)
            }
        }
        Command::Run { config, output_dir, seed, check, threads } => {
            let text = match read(&config) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let (parsed, v) = config::validate(&text);
            for w in &v.warnings {
                eprintln!("warning: {w}");
            }
            let mut cfg = match parsed {
                Some(c) if v.errors.is_empty() => c,
                _ => {
                    for e in &v.errors {
                        eprintln!("error: {e}");
                    }
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = output_dir
                .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
                .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("enekf-out"));
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: cannot start worker pool: {e}");
                    return ExitCode::FAILURE;
                }
            };
            // the effective seed is part of the run's identity
            let identity = if seed.is_some() { format!("{text}\n# seed override: {}\n", cfg.seed) } else { text };
            match pool.install(|| run::run(&cfg, &identity, &dir)) {
                Ok(outcome) => {
                    for v in &outcome.verdicts {
                        let tag = if v.pass { "pass" } else { "FAIL" };
                        println!("{tag}: {} (statistic {}, bound {})", v.check, v.statistic, v.bound);
                    }
                    println!("results written to {}", dir.display());
                    if outcome.blow_up {
                        eprintln!("blow-up detected");
                        ExitCode::from(EXIT_BLOW_UP)
                    } else if check && outcome.verdicts.iter().any(|v| !v.pass) {
                        ExitCode::from(EXIT_CHECK)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
