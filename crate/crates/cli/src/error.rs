use std::path::Path;

use refsteg_core::carrier::CarrierError;
use refsteg_core::model::ModelError;
use refsteg_core::parallel::ParallelError;
use refsteg_core::protocol::{FailureKind, ProtocolError};
use thiserror::Error;

/// Command failure, tagged with the exit status it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or unusable inputs.
    #[error("{0}")]
    Usage(String),
    /// The message could not be recovered or failed verification.
    #[error("{0}")]
    Extraction(String),
    /// Carrier fetches, network and output writes.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Extraction(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<CarrierError> for CliError {
    fn from(e: CarrierError) -> Self {
        match e {
            CarrierError::NotFound(_)
            | CarrierError::FetchFailed(_)
            | CarrierError::Io { .. }
            | CarrierError::CorruptCatalog(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::AllSetsFailed { ref failures } => {
                if failures.iter().all(|f| f.kind == FailureKind::CarrierUnavailable) {
                    CliError::Io(e.to_string())
                } else {
                    CliError::Extraction(e.to_string())
                }
            }
            ProtocolError::CarrierChanged { .. } => CliError::Extraction(e.to_string()),
            ProtocolError::Carrier(c) => c.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ParallelError> for CliError {
    fn from(e: ParallelError) -> Self {
        match e {
            ParallelError::VerificationFailed { .. }
            | ParallelError::MissingChunk(_)
            | ParallelError::DuplicateChunk(_) => CliError::Extraction(e.to_string()),
            ParallelError::CarrierUnavailable { .. } | ParallelError::Pool(_) => CliError::Io(e.to_string()),
            ParallelError::Carrier(c) => c.into(),
            ParallelError::Protocol(p) => p.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

/// Reads a user-supplied input; failures are usage errors.
pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub fn read_input_text(path: &Path) -> Result<String, CliError> {
    String::from_utf8(read_input(path)?)
        .map_err(|_| CliError::Usage(format!("{} is not UTF-8", path.display())))
}

pub fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}
