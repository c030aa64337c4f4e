//! Command-line front end: TOML problem configs in, JSON/CSV reports out.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub mod commands;
pub mod config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o: {e}"))
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Requested solve mode; `Both` runs direct and continuation and reports
/// their agreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    Continuation,
    Both,
}

impl std::str::FromStr for Mode {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Mode, CliError> {
        match s {
            "direct" => Ok(Mode::Direct),
            "continuation" => Ok(Mode::Continuation),
            "both" => Ok(Mode::Both),
            other => Err(CliError::Config(format!(
                "unknown mode {other:?}; expected direct, continuation, or both"
            ))),
        }
    }
}

/// Serialize a value as pretty JSON in the output directory. Floats are
/// written in shortest round-trip form, so files are bit-stable across runs
/// with the same seed.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numerical(format!("serializing {name}: {e}")))?;
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}
