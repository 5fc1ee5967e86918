//! `fls`: simulated sonar datasets, motion-field analysis, elevation
//! estimation and evaluation.

// `!(x > 0.0)` is how NaN gets rejected along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};

mod analyze;
mod args;
mod estimate;
mod eval;
mod gen;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "fls", version, about = "Elevation recovery for 2D forward-looking sonar")]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a basic-motion triplet dataset over seeded terrains.
    Gen(gen::GenArgs),
    /// Tabulate the motion field along an azimuth sweep and score degeneracy.
    Analyze(analyze::AnalyzeArgs),
    /// Estimate elevation maps for every triplet of a dataset.
    Estimate(estimate::EstimateArgs),
    /// Score estimated maps against ground truth.
    Eval(eval::EvalArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Gen(a) => gen::run(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Estimate(a) => estimate::run(a),
        Command::Eval(a) => eval::run(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
