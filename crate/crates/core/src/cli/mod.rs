//! Subcommand implementations for the `nvmux` binary.

pub mod analyze;
pub mod simulate;
pub mod sweep;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nvmux::config::{load_config, ConfigError, ExperimentKind, RunConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Pipeline(String),
    #[error("checkpoint {0} is corrupt: {1}")]
    Checkpoint(PathBuf, String),
    #[error("stopped after {0} rows; rerun with --resume to finish")]
    Interrupted(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Checkpoint(..) => 3,
            CliError::Interrupted(_) => 4,
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn pipeline(e: impl std::fmt::Display) -> Self {
        CliError::Pipeline(e.to_string())
    }
}

pub struct Context {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Context {
    /// Config from `--config`, or defaults for `fallback` when none is given.
    pub fn load(&self, fallback: Option<ExperimentKind>) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, fallback) {
            (Some(p), _) => load_config(p)?,
            (None, Some(k)) => RunConfig::new(k),
            (None, None) => return Err(CliError::Usage("--config is required for this subcommand".into())),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn out_dir(&self, cfg: Option<&RunConfig>) -> Result<PathBuf, CliError> {
        let dir = self
            .out
            .clone()
            .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(dir)
    }
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a buffered file and logs the path.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))?;
    log::info!("event=wrote path={}", path.display());
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))
}
