//! Commands behind the `mixsdp` binary: fitting, univariate projection,
//! clustering benchmarks and synthetic data generation.

use std::fmt;
use std::path::Path;

use serde::Serialize;

pub mod commands;
pub mod config;

pub use commands::{cmd_bench, cmd_fit, cmd_gen, cmd_project_univariate};

pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Failure of a command. Input problems exit with 2, solver or extraction failures with 1.
#[derive(Clone, Debug, PartialEq)]
pub enum CliError {
    Input(String),
    Failure(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn failure(msg: impl Into<String>) -> Self {
        CliError::Failure(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failure(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Failure(_) => "failure",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Failure(m) => m,
        }
    }

    /// Machine-readable error record.
    pub fn record(&self, command: &str) -> serde_json::Value {
        serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "tool": "mixsdp",
            "version": VERSION,
            "command": command,
            "error": { "kind": self.kind(), "message": self.message() },
            "exit_code": self.exit_code(),
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<mixmoment::Error> for CliError {
    fn from(e: mixmoment::Error) -> Self {
        use mixmoment::Error as E;
        match e {
            E::Sizing { .. }
            | E::DimensionMismatch { .. }
            | E::InvalidSet(_)
            | E::InvalidRegularizer(_)
            | E::InvalidSpec(_)
            | E::Data(_)
            | E::InfeasibleGeometry(_)
            | E::Parse(_)
            | E::Degenerate(_) => CliError::Input(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

/// Envelope shared by all reports.
#[derive(Clone, Debug, Serialize)]
pub struct Report<C: Serialize, R: Serialize> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: C,
    pub result: R,
}

impl<C: Serialize, R: Serialize> Report<C, R> {
    pub fn new(command: &'static str, seed: u64, config: C, result: R) -> Self {
        Report { schema_version: SCHEMA_VERSION, tool: "mixsdp", version: VERSION, command, seed, config, result }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::failure(e.to_string()))
    }
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
