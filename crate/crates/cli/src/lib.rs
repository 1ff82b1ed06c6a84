//! Library side of the `aoii` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod policy_io;

use std::path::{Path, PathBuf};

pub use commands::{Overrides, Report};
pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Analyze,
    Optimize,
    Simulate,
    Sweep,
}

/// Runs one command on a loaded config without touching the filesystem.
pub fn execute(cmd: Command, cfg: &RunConfig, o: &Overrides) -> Result<Report, CliError> {
    match cmd {
        Command::Analyze => commands::analyze(cfg, o),
        Command::Optimize => commands::optimize_cmd(cfg, o),
        Command::Simulate => commands::simulate_cmd(cfg, o),
        Command::Sweep => commands::sweep(cfg, o),
    }
}

/// Loads `config`, runs `cmd` and writes the results to `out` (or the
/// config's output directory).
pub fn run(cmd: Command, config: &Path, out: Option<&Path>, o: &Overrides) -> Result<(Report, Vec<PathBuf>), CliError> {
    let cfg = RunConfig::load(config)?;
    let report = execute(cmd, &cfg, o)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.dir.clone());
    let written = output::write_all(&dir, &report.artifacts)?;
    Ok((report, written))
}
