//! Config files, output directories and exit codes.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use hyperzoo::Error;
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// A verification check failed.
    Verification(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl CliError {
    /// 2 config, 3 data or format, 4 verification, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verification(_) => 4,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Batch(_) => 2,
                Error::Format(_)
                | Error::Length { .. }
                | Error::Consistency(_)
                | Error::Layout(_)
                | Error::Data(_)
                | Error::Dimension(_)
                | Error::Index(_)
                | Error::Storage { .. }
                | Error::Json(_) => 3,
                Error::Symmetry(_) => 4,
                Error::State(_) | Error::Divergence(_) => 1,
            },
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Core(Error::Config(msg.into()))
}

/// Whether a flag was given on the command line rather than defaulted.
pub fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable))
}

/// Tracks which flags override a config file. Without a file every flag applies.
pub struct Overrides<'a> {
    matches: &'a ArgMatches,
    from_file: bool,
}

impl<'a> Overrides<'a> {
    pub fn new(matches: &'a ArgMatches, from_file: bool) -> Self {
        Self { matches, from_file }
    }

    pub fn applies(&self, id: &str) -> bool {
        !self.from_file || explicit(self.matches, id)
    }

    pub fn set<T: Clone>(&self, id: &str, target: &mut T, value: &T) {
        if self.applies(id) {
            *target = value.clone();
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::Storage {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_slice(&bytes).map_err(Error::from)?)
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Storage {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, contents).map_err(|e| {
        CliError::Core(Error::Storage {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    write_file(path, s)
}

fn is_non_empty_dir(dir: &Path) -> bool {
    std::fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Refuses a non-empty output directory unless `force`, which clears it.
pub fn prepare_out_dir(dir: &Path, force: bool) -> CliResult {
    if is_non_empty_dir(dir) {
        if !force {
            return Err(config_err(format!("output directory {} is not empty; pass --force to overwrite", dir.display())));
        }
        std::fs::remove_dir_all(dir).map_err(|e| Error::Storage {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::Storage {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Splits a comma-separated list, dropping empty items.
pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

pub fn load_zoo(dir: &Path) -> CliResult<hyperzoo::Zoo> {
    log::info!("loading zoo {}", dir.display());
    Ok(hyperzoo::Zoo::load(dir)?)
}

/// The encoder file of a training run directory, or the path itself.
pub fn encoder_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(crate::cmd_train::ENCODER_FILE)
    } else {
        p.to_path_buf()
    }
}
