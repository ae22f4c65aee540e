use std::path::PathBuf;

use miss_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MissError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot read config file {path}: {source}")]
    ConfigFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("field '{field}': id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { field: String, id: usize, size: usize },
    #[error("sample {0} has an all-padding behavior sequence")]
    EmptySequence(usize),
    #[error("augmentation infeasible: {0}")]
    AugmentationInfeasible(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("non-finite {term} loss at step {step}")]
    NonFinite { term: &'static str, step: usize },
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<MissError>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

impl MissError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Self::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &MissError {
        match self {
            Self::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, MissError>;
