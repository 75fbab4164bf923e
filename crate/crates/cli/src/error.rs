use linkforge::rank::external::ProtocolError;
use thiserror::Error;

/// Every failure maps to one process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0:#}")]
    Data(anyhow::Error),
    #[error("scorer protocol: {0}")]
    Protocol(#[from] ProtocolError),
    /// Some examples failed under an otherwise healthy scorer connection.
    #[error("scorer protocol: {failed} of {total} examples failed, first: {first}")]
    ProtocolPartial {
        failed: usize,
        total: usize,
        first: ProtocolError,
    },
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Protocol(_) | CliError::ProtocolPartial { .. } => 3,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        CliError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
