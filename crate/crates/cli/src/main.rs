mod args;

use std::process::ExitCode;

use actsom::pipeline::{run_populate, run_report, run_train};
use actsom::Error;
use clap::Parser;

use crate::args::{Cli, Command};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_IO: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let config = match cli.command.args().resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };

    let outcome = match &cli.command {
        Command::Train(_) => run_train(&config).map(|summaries| {
            println!("layer\texamples\tdim\tqe_initial\tqe_final");
            for s in summaries {
                println!(
                    "{}\t{}\t{}\t{:.6}\t{:.6}",
                    s.layer,
                    s.n_examples,
                    s.dim,
                    s.initial_quantization_error,
                    s.quantization_error
                );
            }
        }),
        Command::Populate(_) => run_populate(&config).map(|summary| {
            println!(
                "wrote {} maps for {} layers and {} concepts ({} skipped)",
                summary.files.len(),
                summary.index.layers.len(),
                summary.index.concepts.len(),
                summary.skipped.len()
            );
        }),
        Command::Report(_) => run_report(&config).map(|report| {
            println!(
                "scored {} concepts over {} layers: {} values, {} trend verdicts",
                report.concepts.len(),
                report.layers.len(),
                report.values.len(),
                report.hypothesis_results.len()
            );
        }),
    };

    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        _ if e.is_io() => EXIT_IO,
        Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}
