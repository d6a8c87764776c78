//! Provenance record written next to every output.

use std::fs;
use std::path::Path;

use openchain::IntegratorConfig;
use serde::{Deserialize, Serialize};

use crate::config::{CommandKind, Settings};
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn version_string() -> String {
    format!("openchain {}", env!("CARGO_PKG_VERSION"))
}

/// Integrator settings used for one ensemble, tagged by what varied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledIntegrator {
    pub label: String,
    pub integrator: IntegratorConfig,
}

/// A named pass/fail check with the numbers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, reference: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            reference,
            tolerance,
            passed: (value - reference).abs() <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: CommandKind,
    pub version: String,
    pub timestamp: String,
    pub master_seed: u64,
    pub realizations: usize,
    pub settings: Settings,
    pub integrators: Vec<LabelledIntegrator>,
    pub outputs: Vec<String>,
    pub checks: Vec<Check>,
    /// Command-specific summary numbers.
    pub results: serde_json::Value,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::Json)?;
        text.push('\n');
        fs::write(&path, text).map_err(|source| CliError::Io { path, source })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))?;
        if m.settings.command != m.command {
            return Err(CliError::Usage(format!(
                "{}: command `{}` disagrees with settings `{}`",
                path.display(),
                m.command.name(),
                m.settings.command.name()
            )));
        }
        m.settings.validate()?;
        Ok(m)
    }
}
