//! Command-line front end: argument handling and the three commands.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{cmd_bench, cmd_enhance, cmd_eval, CliError, EvalArgs, EXIT_CONFIG};
use config::{parse_classes, RawConfig, RunConfig, BACKEND_ENV, KEYS};
use srdet::evalmap::EvalSpec;

#[derive(Parser)]
#[command(
    name = "srdet",
    version,
    about = "Small-object re-detection on super-resolved windows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a directory of frames.
    Enhance(RunArgs),
    /// Compare base and enhanced prediction files against ground truth.
    Eval(EvalCli),
    /// Synthetic benchmark with the oracle backend.
    Bench(RunArgs),
    /// List the configuration keys.
    Keys,
}

#[derive(Args)]
struct RunArgs {
    /// Key-value config file (`key = value` per line).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` pairs, plus `--no-denoise`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalCli {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    enhanced: PathBuf,
    /// Output directory for the comparison files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Comma-separated category ids, e.g. `3` for cars.
    #[arg(long)]
    classes: Option<String>,
}

fn load_run_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    raw.apply_overrides(&args.overrides)?;
    Ok(RunConfig::from_raw(&raw, std::env::var(BACKEND_ENV).ok())?)
}

fn dispatch(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Enhance(args) => cmd_enhance(&load_run_config(&args)?),
        Command::Bench(args) => cmd_bench(&load_run_config(&args)?),
        Command::Eval(args) => {
            let spec = EvalSpec {
                class_filter: match &args.classes {
                    Some(v) => parse_classes(v)?,
                    None => None,
                },
                ..EvalSpec::default()
            };
            cmd_eval(&EvalArgs {
                gt: args.gt,
                base: args.base,
                enhanced: args.enhanced,
                output_dir: args.out,
                spec,
            })
        }
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:<18} {doc}");
            }
            Ok(0)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
