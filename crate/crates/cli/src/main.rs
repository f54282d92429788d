mod args;
mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use args::{Cli, Command};

/// Name of the resolved-configuration file written next to every output.
pub const RUN_CONFIG: &str = "run-config.json";

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(msg) = cli.command.usage_error() {
        let _ = Cli::command().error(clap::error::ErrorKind::ArgumentConflict, msg).print();
        return ExitCode::from(2);
    }
    match execute(cli.command, cli.run_config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(1)
        }
    }
}

fn one_line(e: &anyhow::Error) -> String {
    e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ").replace('\n', " ")
}

fn execute(command: Command, run_config: Option<PathBuf>) -> anyhow::Result<()> {
    let command = match command {
        Command::Rerun { config } => args::read_run_config(&config)?,
        other => other,
    };
    let resolved = command.resolve()?;
    let sidecar = run_config.unwrap_or_else(|| resolved.default_run_config());
    write_run_config(&resolved, &sidecar)?;
    commands::run(&resolved)
}

fn write_run_config(command: &Command, path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("{}: {e}", dir.display()))?;
    }
    let json = serde_json::to_string_pretty(command)?;
    std::fs::write(path, json + "\n").map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}
