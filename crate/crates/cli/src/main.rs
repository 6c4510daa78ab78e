use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use noisegain_cli::{commands, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "noisegain",
    version,
    about = "Nonlinearity identification and compensation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the clean stimulus and the plant output.
    Simulate(Common),
    /// Estimate the noise-gain profile, inverse table and DNL/INL of a stream.
    Identify(WithInput),
    /// Run the configured pipeline over a stream.
    Compensate(WithInput),
    /// Measure THD before and after compensation over a parameter grid.
    ThdSweep {
        #[command(flatten)]
        common: Common,
        /// Grid points run concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; library defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    output: PathBuf,
    /// Overrides `noise.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct WithInput {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.noise.seed = s;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c.load()?, &c.output),
        Command::Identify(w) => commands::identify(&w.common.load()?, &w.input, &w.common.output),
        Command::Compensate(w) => {
            commands::compensate(&w.common.load()?, &w.input, &w.common.output)
        }
        Command::ThdSweep { common, parallel } => {
            commands::thd_sweep(&common.load()?, &common.output, parallel)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
