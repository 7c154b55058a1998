use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mivi::experiments::{run, RunOptions};
use mivi::synth::generate;

#[derive(Parser)]
#[command(name = "mivi", version, about = "MCMC-interactive variational inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        config: PathBuf,
        /// Worker threads for particle simulation (1 = sequential and
        /// reproducible across machines).
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Output directory; overrides `output.dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic data set (`nb` or `logistic`) as CSV.
    Gen {
        experiment: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("MIVI_LOG_LEVEL", "info");
    env_logger::Builder::from_env(env).format_timestamp(None).init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, threads, out } => {
            if threads == 0 {
                eprintln!("error: --threads must be at least 1");
                return ExitCode::from(2);
            }
            run(&config, &RunOptions { threads, out }).map(|report| {
                println!("{}", report.out_dir.display());
            })
        }
        Command::Gen { experiment, seed, out } => generate(&experiment, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
