use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

mod config;
mod run;

#[derive(Parser)]
#[command(name = "nica-kms", version, about = "KMS-state analyses for C*-dynamics over Z_+^n")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the analyses listed in a job config
    Run {
        config: PathBuf,
        /// Override a config entry, e.g. `params.beta=2`
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write the report here instead of stdout
        #[arg(long)]
        report: Option<PathBuf>,
        /// Seed for random scope elements (default: config value, else 0)
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let Command::Run {
        config,
        overrides,
        report,
        seed,
    } = Cli::parse().command;
    let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = config::parse_config(&text, &overrides).with_context(|| format!("in {}", config.display()))?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let outcome = run::run(&cfg, seed)?;
    match report.or_else(|| cfg.output.clone()) {
        Some(path) => std::fs::write(&path, &outcome.report).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{}", outcome.report),
    }
    if outcome.findings > 0 {
        eprintln!("{} finding(s)", outcome.findings);
    }
    if outcome.faults > 0 {
        eprintln!("{} analysis fault(s)", outcome.faults);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
