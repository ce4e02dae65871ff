use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zofl_harness::{execute, execute_bound_check, parse_config, ExecuteOptions, PROBLEMS};

#[derive(Parser)]
#[command(name = "zofl-bench", version, about = "Run zeroth-order feedback-linearization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSVs, summary and plots.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip the SVG plots.
        #[arg(long)]
        no_plots: bool,
    },
    /// Run an experiment and compare each trajectory with the theory bound.
    CheckBounds {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the built-in problems.
    ListProblems,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, jobs, no_plots } => parse_config(&config).and_then(|cfg| {
            let summary = execute(&cfg, &ExecuteOptions { out_dir: out, jobs, no_plots })?;
            print!("{}", summary.to_text());
            Ok(())
        }),
        Command::CheckBounds { config, out, jobs } => parse_config(&config).and_then(|cfg| {
            let report = execute_bound_check(&cfg, &ExecuteOptions { out_dir: out, jobs, no_plots: true })?;
            print!("{}", zofl_harness::execute::bound_summary_text(&report));
            Ok(())
        }),
        Command::ListProblems => {
            for (name, description) in PROBLEMS {
                println!("{name:<8} {description}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
