use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use odedbn_cli::{cmd_filter, cmd_plot, cmd_simulate, cmd_validate, exit_code, Experiment};
use odedbn_core::Result;

#[derive(Parser)]
#[command(
    name = "odedbn",
    version,
    about = "ODE models as dynamic Bayesian networks, filtered with a bootstrap particle filter"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a model and print its DBN parent sets.
    Validate { model: PathBuf },
    /// Generate the RK4 reference trajectory for a run config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the particle filter and write result, evidence and metrics files.
    Filter {
        #[arg(long)]
        config: PathBuf,
        /// Override the worker thread count (results do not depend on it).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render truth, posterior mean, ±1 sd band and evidence as SVG.
    Plot {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        evidence: Option<PathBuf>,
        #[arg(long = "var")]
        variable: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate { model } => {
            print!("{}", cmd_validate(&model)?);
        }
        Command::Simulate { config } => {
            let path = cmd_simulate(&Experiment::load(&config)?)?;
            println!("wrote {}", path.display());
        }
        Command::Filter { config, threads } => {
            let mut exp = Experiment::load(&config)?;
            if let Some(n) = threads {
                exp.config.filter.threads = n;
            }
            let outcome = cmd_filter(&exp)?;
            let m = &outcome.metrics;
            println!(
                "{}: rmse {:.6} mae {:.6} over {} points; {} evidence times, {} resamples",
                m.variable,
                m.rmse,
                m.mae,
                m.n_points,
                outcome.result.assimilated_times.len(),
                outcome.result.resample_count
            );
            println!("outputs in {}", exp.config.output_dir.display());
        }
        Command::Plot {
            result,
            truth,
            evidence,
            variable,
            out,
        } => {
            cmd_plot(&result, &truth, evidence.as_deref(), &variable, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
