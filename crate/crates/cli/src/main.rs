use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sddekit_cli::{list_models, run_file, Overrides};

#[derive(Parser)]
#[command(name = "sddekit", version, about = "Experiments for stochastic delay equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Override `seeds.master`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: one per core).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the built-in model catalog.
    ListModels,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListModels => {
            print!("{}", list_models());
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            seed,
            out,
            workers,
        } => {
            if workers == Some(0) {
                eprintln!("error: --workers must be at least 1");
                return ExitCode::from(2);
            }
            match run_file(&config, &Overrides { seed, out, workers }) {
                Ok(path) => {
                    println!("{}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
