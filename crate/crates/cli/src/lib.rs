//! Command-line frontend over the overtaking stack: corpus-scale lane
//! detection, conflict-probability sweeps, scenario simulation, and
//! synthetic corpus rendering.
//!
//! Every command emits a [`report::RunReport`] as JSON on stdout that echoes
//! the fully resolved parameters alongside the computed metrics, so a run is
//! reproducible from its own output. Exit codes: 0 success, 2 for
//! configuration or validation problems, 3 for I/O failures.

pub mod detect_cmd;
pub mod render_cmd;
pub mod report;
pub mod risk_cmd;
pub mod simulate_cmd;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use report::RunReport;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;

// ============================================================================
// Errors
// ============================================================================

/// Command failures, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unparseable config, impossible request.
    Validation(String),
    /// The filesystem or a stream failed.
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<overtake_core::Error> for CliError {
    fn from(e: overtake_core::Error) -> Self {
        match e {
            overtake_core::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

pub(crate) fn io_ctx(context: &str, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}

// ============================================================================
// Argument tree
// ============================================================================

#[derive(Debug, Parser)]
#[command(
    name = "overtake",
    version,
    about = "Cooperative overtaking toolkit: lane detection, conflict risk, simulation"
)]
pub struct Cli {
    /// Also write the JSON run report to this file.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect lane templates over a frame corpus and score them against
    /// the ground-truth sidecars.
    Detect(detect_cmd::DetectArgs),
    /// Sweep conflict-probability estimates over areas or closing modes.
    Risk(risk_cmd::RiskArgs),
    /// Run a scripted overtaking scenario and its sweep variants.
    Simulate(simulate_cmd::SimulateArgs),
    /// Render a synthetic camera corpus with per-frame variation.
    Render(render_cmd::RenderArgs),
}

// ============================================================================
// Entry point
// ============================================================================

/// Parses `args`, runs the selected command, prints the run report, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };

    let result = match &cli.command {
        Command::Detect(a) => detect_cmd::run(a),
        Command::Risk(a) => risk_cmd::run(a),
        Command::Simulate(a) => simulate_cmd::run(a),
        Command::Render(a) => render_cmd::run(a),
    };

    match result {
        Ok(report) => emit(&report, cli.report.as_deref()),
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            EXIT_VALIDATION
        }
        Err(CliError::Io(m)) => {
            eprintln!("error: {m}");
            EXIT_IO
        }
    }
}

fn emit(report: &RunReport, path: Option<&std::path::Path>) -> i32 {
    let json = match serde_json::to_string_pretty(report) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("error: cannot serialize run report: {e}");
            return EXIT_IO;
        }
    };
    println!("{json}");
    if let Some(p) = path {
        if let Err(e) = std::fs::write(p, json.as_bytes()) {
            eprintln!("error: cannot write report {}: {e}", p.display());
            return EXIT_IO;
        }
    }
    EXIT_OK
}
