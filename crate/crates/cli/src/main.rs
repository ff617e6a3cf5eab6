use std::path::PathBuf;
use std::process::ExitCode;

use anomaly_cli::commands;
use anomaly_cli::config::DATA_ROOT_ENV;
use anomaly_cli::{resolve_config, CliError, CliResult, Command};
use clap::{Args, Parser, Subcommand};

/// Image anomaly detection with convolutional autoencoders, a CNN baseline and a DCGAN.
///
/// Any config key can be overridden after the subcommand as `--key value`,
/// e.g. `--model kd-cae --noise-train on --epochs 30`.
#[derive(Debug, Parser)]
#[command(name = "anomaly", version)]
struct Cli {
    /// Config file (`key = value` with `[section]` headers), or `builtin:<class>`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (for `report`, where report.csv goes).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct Overrides {
    /// `--key value` pairs applied on top of the config file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0.., value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train a model into the run directory.
    Train(Overrides),
    /// Evaluate a trained run; results go to <run>/eval.
    Eval(Overrides),
    /// Sample images from a trained dcgan run.
    Generate(Overrides),
    /// Render the synthetic dataset to disk in the MVTec layout.
    Synth(Overrides),
    /// Merge evaluated runs into one comparison table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let env_root = std::env::var(DATA_ROOT_ENV).ok();
    let (command, overrides) = match cli.command {
        Cmd::Report { runs } => {
            print!("{}", commands::cmd_report(&runs, cli.out.as_deref())?);
            return Ok(());
        }
        Cmd::Train(o) => (Command::Train, o.overrides),
        Cmd::Eval(o) => (Command::Eval, o.overrides),
        Cmd::Generate(o) => (Command::Generate, o.overrides),
        Cmd::Synth(o) => (Command::Synth, o.overrides),
    };
    let cfg = resolve_config(command, cli.config.as_deref(), cli.seed, cli.out.as_deref(), &overrides, env_root.as_deref())?;
    match command {
        Command::Train => commands::cmd_train(&cfg),
        Command::Eval => commands::cmd_eval(&cfg).map(|_| ()),
        Command::Generate => commands::cmd_generate(&cfg).map(|_| ()),
        Command::Synth => commands::cmd_synth(&cfg).map(|dir| println!("{}", dir.display())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
