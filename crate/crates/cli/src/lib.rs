//! Experiment runner for the boundary-driven oscillator chain: argument and
//! config-file handling, the four experiments, CSV output and run manifests.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use thiserror::Error;

pub use config::{parse_config, CommandKind, Invocation, Overrides, Settings};
pub use manifest::{Check, RunManifest, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Clap(clap::Error),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: openchain::Error,
    },

    #[error("{file} row {row}, column {column}: refusing to write a non-finite number")]
    NonFinite { file: String, row: usize, column: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("manifest serialization: {0}")]
    Json(serde_json::Error),
}

impl CliError {
    /// 2 for usage and configuration, 3 for numerical failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Clap(e) => {
                if e.use_stderr() {
                    2
                } else {
                    0
                }
            }
            CliError::Core { source, .. } => {
                if source.is_numerical() {
                    3
                } else {
                    2
                }
            }
            CliError::NonFinite { .. } => 3,
            CliError::Io { .. } | CliError::Csv { .. } | CliError::Json(_) => 4,
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("key `threads`: must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("key `threads`: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs one experiment and writes its files plus `manifest.json` into
/// `output_dir`. `timestamp` is reused on replay so the manifest itself is
/// reproduced byte for byte.
pub fn execute(
    settings: &Settings,
    output_dir: &Path,
    threads: Option<usize>,
    timestamp: Option<String>,
) -> Result<RunManifest, CliError> {
    settings.validate()?;
    let out = with_threads(threads, || commands::run(settings))??;
    fs::create_dir_all(output_dir).map_err(|source| CliError::Io {
        path: output_dir.to_path_buf(),
        source,
    })?;
    let mut outputs = Vec::new();
    for table in &out.tables {
        table.write(output_dir)?;
        outputs.push(table.file_name.to_string());
    }
    let manifest = RunManifest {
        command: settings.command,
        version: manifest::version_string(),
        timestamp: timestamp.unwrap_or_else(|| Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)),
        master_seed: settings.seed,
        realizations: settings.realizations,
        settings: settings.clone(),
        integrators: out.integrators,
        outputs,
        checks: out.checks,
        results: out.results,
    };
    manifest.write(output_dir)?;
    Ok(manifest)
}

/// Re-runs the experiment recorded in `manifest_path`. Without an explicit
/// directory the outputs are regenerated next to the manifest.
pub fn replay(manifest_path: &Path, output_dir: Option<&Path>, threads: Option<usize>) -> Result<RunManifest, CliError> {
    let recorded = RunManifest::load(manifest_path)?;
    if recorded.version != manifest::version_string() {
        eprintln!(
            "warning: manifest written by {}, replaying with {}",
            recorded.version,
            manifest::version_string()
        );
    }
    let dir = match output_dir {
        Some(d) => d.to_path_buf(),
        None => manifest_path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    execute(&recorded.settings, &dir, threads, Some(recorded.timestamp.clone()))
}

/// Parses `argv` and runs it; returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let result = parse_config(argv).and_then(|inv| match inv {
        Invocation::Run {
            settings,
            output_dir,
            threads,
        } => execute(&settings, &output_dir, threads, None),
        Invocation::Replay {
            manifest,
            output_dir,
            threads,
        } => replay(&manifest, output_dir.as_deref(), threads),
    });
    match result {
        Ok(m) => {
            for check in m.checks.iter().filter(|c| !c.passed) {
                eprintln!(
                    "check failed: {} (value {:e}, reference {:e}, tolerance {:e})",
                    check.name, check.value, check.reference, check.tolerance
                );
            }
            println!("{}: wrote {}", m.command.name(), m.outputs.join(", "));
            0
        }
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
