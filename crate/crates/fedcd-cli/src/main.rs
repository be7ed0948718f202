use std::path::PathBuf;
use std::process;

use clap::{Parser, Subcommand};

use fedcd_cli::experiment;

#[derive(Parser)]
#[command(
    name = "fedcd",
    version,
    about = "Simulate federated learning with milestone cloning and deletion of global models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv + summary.json
    Run {
        /// Experiment file (TOML)
        config: PathBuf,
        /// Overrides of the form --key=value, e.g. --seed=2 or
        /// --trainer.learning_rate=0.1
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run both strategies on the identical data partition and report deltas
    Compare {
        /// Experiment file (TOML)
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run once per swept value under a shared seed
    Sweep {
        /// Experiment file (TOML)
        config: PathBuf,
        /// One of: bias, quantization_bits, score_window
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. --values 0.2,0.4,0.6
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => {
            experiment::cmd_run(&config, &overrides).map(|_| ())
        }
        Command::Compare { config, overrides } => {
            experiment::cmd_compare(&config, &overrides).map(|_| ())
        }
        Command::Sweep { config, param, values, overrides } => {
            experiment::cmd_sweep(&config, &param, &values, &overrides).map(|_| ())
        }
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        process::exit(err.exit_code());
    }
}
