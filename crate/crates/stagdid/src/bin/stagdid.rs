use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stagdid::cli;
use stagdid::config::RunConfig;
use stagdid::Error;

#[derive(Parser)]
#[command(name = "stagdid", version, about = "Staggered difference-in-differences estimation")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate on the configured input and write result files.
    Estimate {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte Carlo study of the configured estimator against known truth.
    Simulate {
        /// TOML run configuration with a [simulate] section.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in validation criteria (exit code = failures).
    Validate {
        /// Only run criteria whose names contain one of these strings.
        #[arg(long)]
        criterion: Vec<String>,
    },
}

/// Exit codes: 1 config, 2 data, 3 estimation.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Schema(_) | Error::Data(_) | Error::EmptyDataset | Error::Dimension(_)
        | Error::Io(_) => 2,
        _ => 3,
    }
}

fn stage_for(e: &Error) -> &'static str {
    match exit_code_for(e) {
        1 => "config",
        2 => "data",
        _ => "estimation",
    }
}

fn init_workers(config: &RunConfig) {
    let workers = std::env::var("STAGDID_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(config.run.workers);
    if workers > 0 {
        // ignore the error if a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

fn load_config(path: &PathBuf) -> Result<(RunConfig, String), Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = RunConfig::parse(&text)?;
    Ok((config, text))
}

fn run() -> Result<u8, Error> {
    let args = Args::parse();
    match args.command {
        Command::Estimate { config } => {
            let (config, text) = load_config(&config)?;
            init_workers(&config);
            cli::cmd_estimate(&config, &text)?;
            Ok(0)
        }
        Command::Simulate { config } => {
            let (config, text) = load_config(&config)?;
            init_workers(&config);
            cli::cmd_simulate(&config, &text)?;
            Ok(0)
        }
        Command::Validate { criterion } => {
            let filters = if criterion.is_empty() {
                None
            } else {
                Some(criterion.as_slice())
            };
            let failed = cli::cmd_validate(filters);
            Ok(failed.min(125) as u8)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("stagdid: {} error: {e}", stage_for(&e));
            ExitCode::from(exit_code_for(&e))
        }
    }
}
