use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use pwell::commands::Command;
use pwell::scenario::{load_config, ScenarioConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Well constants and a mesh convergence table.
    Constants,
    /// Functionals and set membership of the initial data.
    Classify,
    /// Integrate and write the trajectory CSV (and SVG).
    Simulate,
    /// Re-read a trajectory CSV and write the diagnostics table.
    Analyze,
    /// Run the base profile over a grid of scalings λ/λ*.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Constants => Command::Constants,
            Cmd::Classify => Command::Classify,
            Cmd::Simulate => Command::Simulate,
            Cmd::Analyze => Command::Analyze,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

const EXIT_HELP: &str = "\
Exit codes: 0 decayed or completed, 2 blown up, 3 grew or inconclusive, 1 usage or runtime error.
PWELL_THREADS caps the number of concurrent sweep runs.
`--config` also accepts the built-in presets `stable-p4` and `unstable-p4`.";

fn after_help() -> String {
    let defaults = serde_json::to_string_pretty(&ScenarioConfig::default()).unwrap_or_default();
    format!("{EXIT_HELP}\n\nConfig defaults (missing keys take these values; initial.margin applies when target_set is not \"none\"):\n{defaults}")
}

#[derive(Debug, Parser)]
#[command(
    name = "pwell",
    version,
    about = "Potential-well laboratory for a damped semilinear wave equation with a dynamic boundary condition"
)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON scenario file, or the name of a built-in preset.
    #[arg(long, short)]
    config: PathBuf,
    /// Replace a config value: dotted key, JSON value (bare text is a string).
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::command_with_help().try_get_matches() {
        Ok(m) => match <Cli as clap::FromArgMatches>::from_arg_matches(&m) {
            Ok(cli) => cli,
            Err(e) => return usage_error(e),
        },
        Err(e) => return usage_error(e),
    };
    let cfg = match load_config(&cli.config, &cli.overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("pwell: {e}");
            return ExitCode::from(1);
        }
    };
    match Command::from(cli.command).execute(&cfg) {
        Ok(out) => {
            print!("{}", out.report);
            ExitCode::from(out.exit_code as u8)
        }
        Err(e) => {
            eprintln!("pwell: {e}");
            ExitCode::from(1)
        }
    }
}

impl Cli {
    fn command_with_help() -> clap::Command {
        <Cli as clap::CommandFactory>::command().after_help(after_help())
    }
}

fn usage_error(e: clap::Error) -> ExitCode {
    use clap::error::ErrorKind;
    let _ = e.print();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
        _ => ExitCode::from(1),
    }
}
