use std::io;
use std::path::{Path, PathBuf};

use sacnf_core::analysis::AnalysisError;
use sacnf_core::env::EnvError;
use sacnf_core::sac::SacError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint shape mismatch in `{group}`: {reason}")]
    Shape { group: String, reason: String },
    #[error("malformed metrics file {}: {reason}", path.display())]
    Metrics { path: PathBuf, reason: String },
    #[error("training failed at env step {env_step}: {source}")]
    Train { env_step: usize, source: SacError },
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    /// Stable short name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Io { .. } => "io",
            Error::Checkpoint(_) => "checkpoint",
            Error::Shape { .. } => "shape",
            Error::Metrics { .. } => "metrics",
            Error::Train { .. } => "train",
            Error::Sac(_) => "train",
            Error::Analysis(_) => "analysis",
            Error::Env(_) => "env",
            Error::Usage(_) => "usage",
        }
    }

    /// One-line JSON record for machine consumption.
    pub fn to_json_line(&self) -> String {
        let mut record = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            Error::Config { field, .. } => record["field"] = field.clone().into(),
            Error::Shape { group, .. } => record["group"] = group.clone().into(),
            Error::Io { path, .. } | Error::Metrics { path, .. } => record["path"] = path.display().to_string().into(),
            Error::Train { env_step, .. } => record["env_step"] = (*env_step).into(),
            _ => {}
        }
        record.to_string()
    }
}
