use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::netpbm::NetpbmError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("input not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("corrupt model file {}: {reason}", path.display())]
    CorruptModel { path: PathBuf, reason: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged for seed {seed} ({network}) at epoch {epoch}, batch {batch}")]
    Divergence {
        seed: u64,
        network: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: NetpbmError },
    #[error(transparent)]
    Core(binsight::Error),
}

impl CliError {
    pub fn from_io(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            CliError::MissingInput(path.to_path_buf())
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    /// 0 ok, 1 invalid configuration or other failure, 2 missing input,
    /// 3 corrupt model, 4 shape mismatch, 5 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::CorruptModel { .. } => 3,
            CliError::Shape(_) | CliError::Core(binsight::Error::Shape { .. }) => 4,
            CliError::Divergence { .. } | CliError::Core(binsight::Error::Divergence { .. }) => 5,
            _ => 1,
        }
    }
}

impl From<binsight::Error> for CliError {
    fn from(e: binsight::Error) -> Self {
        match e {
            binsight::Error::Shape { .. } => CliError::Shape(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
