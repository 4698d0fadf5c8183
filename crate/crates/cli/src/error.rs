use std::path::Path;

use tracekit::chain::ChainError;
use tracekit::features::{DatasetError, FeatureError};
use tracekit::gateway::GatewayError;
use tracekit::model::ModelError;
use tracekit::pipeline::{PipelineError, ScopeError};
use tracekit::trace::SignatureDbError;

/// Every failure maps to one process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or input documents. Exit 2.
    #[error("{0}")]
    Usage(String),
    /// The chain data source could not answer. Exit 3.
    #[error("{0}")]
    Transport(String),
    /// The LLM gateway could not answer. Exit 4.
    #[error("{0}")]
    Gateway(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Transport(_) => 3,
            CliError::Gateway(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        if e.is_transport() {
            CliError::Transport(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_transport() {
            CliError::Transport(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::Gateway(e.to_string())
    }
}

macro_rules! usage_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Usage(e.to_string())
            }
        }
    )*};
}

usage_from!(ModelError, ScopeError, DatasetError, FeatureError, SignatureDbError);
