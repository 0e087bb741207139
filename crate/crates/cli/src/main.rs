//! `qwgeom`: detection, exact evaluation, certified bounds and brute-force
//! checks for random walks in the quarter plane.

mod commands;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BoundArgs, Common, MeasureArgs, OracleArgs};

#[derive(Debug, Parser)]
#[command(
    name = "qwgeom",
    version,
    about = "Geometric-term analysis of quarter-plane random walks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decide whether the invariant measure is a finite sum of geometric terms.
    Detect(Common),
    /// Exact coefficients and performance values of a representable model.
    Measure(MeasureArgs),
    /// Certified bounds from a perturbed model.
    Bound(BoundArgs),
    /// Truncated-lattice reference values.
    Oracle(OracleArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, format) = match &cli.command {
        Command::Detect(c) => (commands::cmd_detect(c), c.format),
        Command::Measure(a) => (commands::cmd_measure(a), a.common.format),
        Command::Bound(a) => (commands::cmd_bound(a), a.common.format),
        Command::Oracle(a) => (commands::cmd_oracle(a), a.common.format),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.render(format));
            for w in &outcome.report.warnings {
                if format != report::Format::Table {
                    eprintln!("warning: {w}");
                }
            }
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::error_code(&e) as u8)
        }
    }
}
