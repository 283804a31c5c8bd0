use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use transridge_cli::{run, CliError, Command, Config};
use transridge_core::Objective;

#[derive(Parser)]
#[command(name = "transridge", version, about = "Transfer-learning ridge regression across correlated studies")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Configuration file (flat key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Worker threads for simulations; 0 uses all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Write one synthetic multi-study dataset.
    Simulate,
    /// Limiting optimal weights and risk.
    Theory,
    /// Theory versus Monte Carlo risk over a penalty grid.
    Curve,
    /// Limiting weights as the correlation structure varies.
    Adaptivity,
    /// Single-study over transfer risk ratios.
    Ratio,
    /// Fit transfer ridge to study CSV files.
    Fit,
    /// Predict a test CSV with a saved fit.
    Predict,
}

#[derive(ValueEnum, Clone, Copy)]
enum Mode {
    Estimation,
    Prediction,
}

fn execute(cli: Cli) -> Result<String, CliError> {
    let path = cli.config.ok_or_else(|| CliError::config("--config is required"))?;
    let mut config = Config::from_file(&path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = cli.out_dir {
        config.out_dir = dir;
    }
    if let Some(mode) = cli.mode {
        config.mode = match mode {
            Mode::Estimation => Objective::Estimation,
            Mode::Prediction => Objective::Prediction,
        };
    }
    let threads = cli.threads.unwrap_or(config.threads);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::config(format!("threads: {e}")))?;
    }
    let command = match cli.command {
        Cmd::Simulate => Command::Simulate,
        Cmd::Theory => Command::Theory,
        Cmd::Curve => Command::Curve,
        Cmd::Adaptivity => Command::Adaptivity,
        Cmd::Ratio => Command::Ratio,
        Cmd::Fit => Command::Fit,
        Cmd::Predict => Command::Predict,
    };
    run(command, &config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config(e.to_string().lines().next().unwrap_or("invalid arguments").to_string());
            eprintln!("{}", err.to_json_line());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json_line());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
