use std::path::PathBuf;

use thiserror::Error;

use crate::bundle::{Modality, Split};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {modality} of sample '{sample}' at frame {frame}, dim {dim}")]
    NonFinite {
        sample: String,
        modality: Modality,
        frame: usize,
        dim: usize,
    },
    #[error("split '{0}' is empty")]
    EmptySplit(Split),
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("not implemented: {0}")]
    NotImplemented(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid wav file {path}: {msg}")]
    Wav { path: PathBuf, msg: String },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("extraction failed for {} sample(s): {}", .failures.len(), format_failures(.failures))]
    Extraction { failures: Vec<(String, String)> },
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("training diverged at epoch {epoch} (parameter '{param}'): {detail}")]
    Diverged {
        epoch: usize,
        param: String,
        detail: String,
    },
    #[error("seed {seed} failed: {source}")]
    SeedFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Autodiff(#[from] msa_autodiff::AutodiffError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_failures(failures: &[(String, String)]) -> String {
    failures
        .iter()
        .map(|(id, why)| format!("{id} ({why})"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Coarse error categories; the CLI maps them onto exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Runtime,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Diverged { .. } | Error::Autodiff(_) => ErrorClass::Runtime,
            Error::SeedFailed { source, .. } => match source.class() {
                ErrorClass::Validation if !matches!(**source, Error::Io { .. }) => {
                    ErrorClass::Validation
                }
                _ => ErrorClass::Runtime,
            },
            _ => ErrorClass::Validation,
        }
    }
}
