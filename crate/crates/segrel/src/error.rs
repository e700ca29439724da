//! Error categories shared by every command. The category is the message prefix
//! and selects the process exit code.

use std::io;
use std::path::{Path, PathBuf};

use segrel_core::decode::DecodeError;
use segrel_core::eval::MetricError;
use segrel_core::model::ModelError;
use segrel_core::schema::SchemaError;
use segrel_core::tokenizer::TokenizerError;
use segrel_core::train::{SubsampleError, TrainError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("sizing error: {0}")]
    Sizing(String),
    #[error("io error: {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("hash mismatch: {0}")]
    HashMismatch(String),
    #[error("training error: {0}")]
    Train(String),
    #[error("model error: {0}")]
    Model(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Sizing(_) => "sizing",
            CliError::Io { .. } => "io",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::HashMismatch(_) => "hash",
            CliError::Train(_) => "training",
            CliError::Model(_) => "model",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Sizing(_) => 4,
            CliError::Io { .. } => 5,
            CliError::Checkpoint(_) => 6,
            CliError::HashMismatch(_) => 7,
            CliError::Train(_) => 8,
            CliError::Model(_) => 9,
        }
    }

    /// Prefixes the message with a location such as `train.jsonl:12`.
    pub fn at(self, location: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{location}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{location}: {m}")),
            CliError::Sizing(m) => CliError::Sizing(format!("{location}: {m}")),
            CliError::Checkpoint(m) => CliError::Checkpoint(format!("{location}: {m}")),
            CliError::HashMismatch(m) => CliError::HashMismatch(format!("{location}: {m}")),
            CliError::Train(m) => CliError::Train(format!("{location}: {m}")),
            CliError::Model(m) => CliError::Model(format!("{location}: {m}")),
            io @ CliError::Io { .. } => io,
        }
    }
}

pub fn io_error(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

impl From<SchemaError> for CliError {
    fn from(e: SchemaError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SubsampleError> for CliError {
    fn from(e: SubsampleError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Sizing { .. } => CliError::Sizing(e.to_string()),
            ModelError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) => CliError::Config(e.to_string()),
            TrainError::EmptyDataset => CliError::Data(e.to_string()),
            TrainError::StateMismatch(_) => CliError::Checkpoint(e.to_string()),
            other => CliError::Train(other.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Model(m) => m.into(),
            DecodeError::Sizing { .. } => CliError::Sizing(e.to_string()),
            DecodeError::Config(_) => CliError::Config(e.to_string()),
            DecodeError::Tokenizer(t) => t.into(),
        }
    }
}
