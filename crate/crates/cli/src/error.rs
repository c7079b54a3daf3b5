use std::io;
use std::path::{Path, PathBuf};

use plumeshine_core::dataset::DatasetError;
use plumeshine_core::dose_kernel::KernelError;
use plumeshine_core::evaluation::EvalError;
use plumeshine_core::kv::KvError;
use plumeshine_core::nuclide_db::DbError;
use plumeshine_core::tree_models::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("config: {0}")]
    Kv(#[from] KvError),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Service(String),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// Stable machine-readable class printed before the message.
    pub fn class(&self) -> &'static str {
        match self {
            Self::Config(_) | Self::Kv(_) => "config",
            Self::Db(_) => "nuclide_db",
            Self::Kernel(_) => "kernel",
            Self::Dataset(DatasetError::Io(_)) | Self::Io { .. } => "io",
            Self::Dataset(DatasetError::Kernel { .. }) => "kernel",
            Self::Dataset(_) => "dataset",
            Self::Model(ModelError::Data(DatasetError::Io(_))) => "io",
            Self::Model(_) => "model",
            Self::Eval(_) => "evaluation",
            Self::Service(_) => "service",
        }
    }

    /// `error[class]: message` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {msg}", self.class())
    }
}
