//! `orfel`: generate, inject, preprocess, detect, evaluate and benchmark.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
//! 3 malformed input, 4 detection stopped at the iteration cap (the report
//! is still written).

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{BenchArgs, ConfigFile, DetectArgs, EvalArgs, GenArgs, InjectArgs, Layer, PreprocessArgs};
use error::{EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(
    name = "orfel",
    version,
    about = "Lockstep detection in weighted bipartite recommendation graphs"
)]
struct Cli {
    /// TOML file with one table per subcommand; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Only machine-readable output on stdout; log warnings and errors only.
    #[arg(long, short, global = true)]
    quiet: bool,
    /// More logging (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a random bipartite edge list.
    Gen(GenArgs),
    /// Append lockstep attacks to an edge list and write their ground truth.
    Inject(InjectArgs),
    /// Ingest an edge list into a sharded graph directory.
    Preprocess(PreprocessArgs),
    /// Run lockstep detection on a graph directory.
    Detect(DetectArgs),
    /// Score detection reports against ground truth.
    Eval(EvalArgs),
    /// Run the edge and seed scaling sweeps.
    Bench(BenchArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("ORFEL_LOG")
        .format_timestamp(None)
        .init();

    let file = match &cli.config {
        Some(path) => match ConfigFile::load(path) {
            Ok(c) => c,
            Err(e) => {
                log::error!("{e}");
                return ExitCode::from(e.exit_code());
            }
        },
        None => ConfigFile::default(),
    };
    let out = commands::Output { quiet: cli.quiet };
    let result = match cli.command {
        Command::Gen(a) => commands::gen(a.or(file.gen), &out),
        Command::Inject(a) => commands::inject(a.or(file.inject), &out),
        Command::Preprocess(a) => commands::preprocess(a.or(file.preprocess), &out),
        Command::Detect(a) => commands::detect(a.or(file.detect), &out),
        Command::Eval(a) => commands::eval(a.or(file.eval), &out),
        Command::Bench(a) => commands::bench(a.or(file.bench), &out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
