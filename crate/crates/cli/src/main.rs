use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use varsim_cli::{compare, report, run, CliError};

#[derive(Parser)]
#[command(name = "varsim", version, about = "Gossip and federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Write outputs here instead of `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw accuracy, variance and weight-difference charts for a run.
    Report { run_dir: PathBuf },
    /// Compare the summaries of two runs.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Where to write the comparison.
        #[arg(long, default_value = "compare.json")]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Run { config, out } => run::run(&config, out.as_deref()).map(|dir| {
            println!("wrote {}", dir.display());
        }),
        Command::Report { run_dir } => report::report(&run_dir).map(|()| {
            println!("wrote charts to {}", run_dir.display());
        }),
        Command::Compare { a, b, output } => compare::compare(&a, &b, &output).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
